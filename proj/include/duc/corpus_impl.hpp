#pragma once

#include "duc/error.hpp"

namespace duc {

template <typename T>
std::vector<T> make_token_repetition(std::span<const T> sample, int n_start, int group_size) {
  const auto len = static_cast<long>(sample.size());
  if (len < 1) throw ParameterError("sample: must contain at least one token");
  if (n_start < 0) throw ParameterError("n_start: must be nonnegative, got " + std::to_string(n_start));
  if (group_size < 1) throw ParameterError("group_size: must be positive, got " + std::to_string(group_size));
  if (n_start + group_size > len)
    throw ParameterError("n_start + group_size: " + std::to_string(n_start + group_size) +
                         " exceeds sample length " + std::to_string(len));
  std::vector<T> out(sample.begin(), sample.begin() + n_start + group_size);
  out.reserve(sample.size());
  for (long i = n_start + group_size; i < len; ++i) out.push_back(sample[n_start + (i - n_start) % group_size]);
  return out;
}

template <typename T>
std::vector<T> make_paragraph_repetition(std::span<const T> sample, int repeat_count) {
  if (repeat_count < 1) throw ParameterError("repeat_count: must be at least 1, got " + std::to_string(repeat_count));
  std::vector<T> out;
  out.reserve(sample.size() * static_cast<std::size_t>(repeat_count));
  for (int r = 0; r < repeat_count; ++r) out.insert(out.end(), sample.begin(), sample.end());
  return out;
}

}  // namespace duc
