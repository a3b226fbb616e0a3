#include "duc/toy_world.hpp"

#include "duc/error.hpp"
#include "duc/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <set>
#include <string_view>

namespace duc {
namespace {

struct Animal {
  std::string_view name, home, food, size, sound, moves;
};

constexpr std::array<Animal, 23> kAnimals{{
    {"cat", "house", "fish", "small", "meows", "sleeps"},
    {"dog", "house", "meat", "medium", "barks", "runs"},
    {"horse", "farm", "grass", "big", "neighs", "runs"},
    {"cow", "farm", "grass", "big", "moos", "walks"},
    {"sheep", "farm", "grass", "medium", "bleats", "walks"},
    {"goat", "farm", "grass", "small", "bleats", "climbs"},
    {"pig", "farm", "corn", "medium", "grunts", "walks"},
    {"lion", "savanna", "meat", "big", "roars", "hunts"},
    {"tiger", "jungle", "meat", "big", "roars", "hunts"},
    {"bear", "forest", "berries", "big", "growls", "walks"},
    {"wolf", "forest", "meat", "medium", "howls", "hunts"},
    {"fox", "forest", "mice", "small", "yelps", "runs"},
    {"rabbit", "field", "carrots", "small", "squeaks", "hops"},
    {"mouse", "field", "seeds", "small", "squeaks", "runs"},
    {"deer", "forest", "leaves", "big", "bellows", "runs"},
    {"owl", "forest", "mice", "small", "hoots", "flies"},
    {"eagle", "mountains", "fish", "medium", "screams", "flies"},
    {"duck", "pond", "bread", "small", "quacks", "swims"},
    {"frog", "pond", "insects", "small", "croaks", "hops"},
    {"snake", "desert", "mice", "medium", "hisses", "slides"},
    {"whale", "sea", "fish", "huge", "sings", "swims"},
    {"shark", "sea", "fish", "big", "splashes", "swims"},
    {"dolphin", "sea", "fish", "medium", "clicks", "swims"},
}};

struct Colored {
  std::string_view name, color;
};

constexpr std::array<Colored, 12> kFruits{{{"apple", "red"},
                                           {"banana", "yellow"},
                                           {"pear", "green"},
                                           {"grape", "purple"},
                                           {"lemon", "yellow"},
                                           {"cherry", "red"},
                                           {"peach", "pink"},
                                           {"plum", "purple"},
                                           {"mango", "orange"},
                                           {"melon", "green"},
                                           {"lime", "green"},
                                           {"kiwi", "brown"}}};

constexpr std::array<Colored, 10> kVegetables{{{"carrot", "orange"},
                                               {"potato", "brown"},
                                               {"onion", "white"},
                                               {"pepper", "red"},
                                               {"bean", "green"},
                                               {"pea", "green"},
                                               {"corn", "yellow"},
                                               {"cabbage", "green"},
                                               {"tomato", "red"},
                                               {"lettuce", "green"}}};

constexpr std::array<std::string_view, 13> kColors{"red",  "blue",  "green", "yellow", "purple", "orange", "white",
                                                   "black", "brown", "pink",  "gray",   "gold",   "silver"};

struct City {
  std::string_view name, country, feature;
};

constexpr std::array<City, 12> kCities{{{"paris", "france", "a tall tower"},
                                        {"rome", "italy", "an old arena"},
                                        {"london", "england", "a big clock"},
                                        {"tokyo", "japan", "bright streets"},
                                        {"cairo", "egypt", "the pyramids"},
                                        {"lima", "peru", "a long coast"},
                                        {"oslo", "norway", "cold winters"},
                                        {"delhi", "india", "busy markets"},
                                        {"berlin", "germany", "a famous wall"},
                                        {"madrid", "spain", "a royal palace"},
                                        {"vienna", "austria", "grand music halls"},
                                        {"dublin", "ireland", "green parks"}}};

constexpr std::array<std::string_view, 16> kNames{"anna", "ben",   "clara", "david", "emma", "frank", "grace", "henry",
                                                  "iris", "jack",  "kate",  "leo",   "mia",  "noah",  "olivia", "paul"};

struct Job {
  std::string_view name, place, activity;
};

constexpr std::array<Job, 10> kJobs{{{"teacher", "school", "teaches children"},
                                     {"doctor", "hospital", "helps sick people"},
                                     {"farmer", "field", "grows food"},
                                     {"baker", "bakery", "bakes bread"},
                                     {"pilot", "airport", "flies planes"},
                                     {"nurse", "hospital", "cares for patients"},
                                     {"painter", "studio", "paints pictures"},
                                     {"driver", "garage", "drives a bus"},
                                     {"writer", "library", "writes books"},
                                     {"singer", "theater", "sings songs"}}};

struct Tool {
  std::string_view name, use;
};

constexpr std::array<Tool, 10> kTools{{{"hammer", "hit nails"},
                                       {"saw", "cut wood"},
                                       {"drill", "make holes"},
                                       {"knife", "cut bread"},
                                       {"rope", "tie things"},
                                       {"ladder", "reach high places"},
                                       {"shovel", "dig holes"},
                                       {"brush", "paint walls"},
                                       {"needle", "sew clothes"},
                                       {"wrench", "turn bolts"}}};

struct Sport {
  std::string_view name, gear;
};

constexpr std::array<Sport, 9> kSports{{{"football", "ball"},
                                        {"tennis", "racket"},
                                        {"golf", "club"},
                                        {"hockey", "stick"},
                                        {"boxing", "pair of gloves"},
                                        {"cricket", "bat"},
                                        {"swimming", "swimsuit"},
                                        {"running", "pair of shoes"},
                                        {"cycling", "helmet"}}};

struct Instrument {
  std::string_view name, family;
};

constexpr std::array<Instrument, 8> kInstruments{{{"piano", "keyboard"},
                                                  {"guitar", "string"},
                                                  {"violin", "string"},
                                                  {"cello", "string"},
                                                  {"harp", "string"},
                                                  {"drum", "percussion"},
                                                  {"flute", "wind"},
                                                  {"trumpet", "brass"}}};

struct Planet {
  std::string_view name, size;
};

constexpr std::array<Planet, 8> kPlanets{{{"mercury", "small"},
                                          {"venus", "rocky"},
                                          {"earth", "rocky"},
                                          {"mars", "small"},
                                          {"jupiter", "huge"},
                                          {"saturn", "huge"},
                                          {"uranus", "large"},
                                          {"neptune", "large"}}};

struct Vehicle {
  std::string_view name, route;
};

constexpr std::array<Vehicle, 8> kVehicles{{{"car", "road"},
                                            {"bus", "road"},
                                            {"train", "rails"},
                                            {"boat", "river"},
                                            {"plane", "sky"},
                                            {"bike", "road"},
                                            {"truck", "highway"},
                                            {"ship", "sea"}}};

constexpr std::array<std::string_view, 6> kDrinks{"water", "milk", "tea", "coffee", "juice", "soda"};
constexpr std::array<std::string_view, 7> kDays{"monday", "tuesday", "wednesday", "thursday",
                                                "friday", "saturday", "sunday"};
constexpr std::array<std::string_view, 12> kMonths{"january", "february", "march",     "april",   "may",      "june",
                                                   "july",    "august",   "september", "october", "november", "december"};
constexpr std::array<std::string_view, 4> kSeasons{"spring", "summer", "autumn", "winter"};
constexpr std::array<std::string_view, 20> kNumbers{"one",     "two",     "three",    "four",     "five",
                                                    "six",     "seven",   "eight",    "nine",     "ten",
                                                    "eleven",  "twelve",  "thirteen", "fourteen", "fifteen",
                                                    "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};
constexpr std::array<std::string_view, 8> kOrdinals{"first", "second", "third",   "fourth",
                                                    "fifth", "sixth",  "seventh", "eighth"};
constexpr std::array<std::string_view, 6> kWeather{"sunny", "rainy", "windy", "cold", "warm", "cloudy"};
constexpr std::array<std::string_view, 6> kFeelings{"happy", "tired", "hungry", "calm", "excited", "proud"};

template <typename T, std::size_t N>
const T& pick(const std::array<T, N>& a, Rng& rng) {
  return a[rng.below(N)];
}

template <typename T>
const T& pick(const std::vector<T>& a, Rng& rng) {
  return a[rng.below(a.size())];
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += (i + 1 == items.size()) ? " and " : " , ";
    out += items[i];
  }
  return out;
}

template <typename T, std::size_t N, typename Name>
std::vector<std::string> distinct_names(const std::array<T, N>& a, int k, Rng& rng, Name name) {
  std::vector<std::size_t> idx(N);
  for (std::size_t i = 0; i < N; ++i) idx[i] = i;
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (int i = 0; i < k && i < static_cast<int>(N); ++i) out.emplace_back(name(a[idx[static_cast<std::size_t>(i)]]));
  return out;
}

struct Person {
  std::string name, job, city, pet, color, instrument, sport;
};

struct Category {
  std::string_view plural;
  std::function<std::vector<std::string>(int, Rng&)> draw;
  int size;
};

struct QA {
  std::string question;
  std::string answer;
};

std::string str(std::string_view s) { return std::string(s); }

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : world_rng_(derive_seed(seed, 1)) {
    for (auto n : kNames) {
      Person p;
      p.name = str(n);
      p.job = str(pick(kJobs, world_rng_).name);
      p.city = str(pick(kCities, world_rng_).name);
      p.pet = str(pick(kAnimals, world_rng_).name);
      p.color = str(pick(kColors, world_rng_));
      p.instrument = str(pick(kInstruments, world_rng_).name);
      p.sport = str(pick(kSports, world_rng_).name);
      people_.push_back(p);
    }
    auto by_name = [](const auto& x) { return x.name; };
    auto self = [](std::string_view x) { return x; };
    categories_ = {
        {"animals", [=](int k, Rng& r) { return distinct_names(kAnimals, k, r, by_name); }, int(kAnimals.size())},
        {"fruits", [=](int k, Rng& r) { return distinct_names(kFruits, k, r, by_name); }, int(kFruits.size())},
        {"vegetables", [=](int k, Rng& r) { return distinct_names(kVegetables, k, r, by_name); },
         int(kVegetables.size())},
        {"colors", [=](int k, Rng& r) { return distinct_names(kColors, k, r, self); }, int(kColors.size())},
        {"cities", [=](int k, Rng& r) { return distinct_names(kCities, k, r, by_name); }, int(kCities.size())},
        {"countries", [=](int k, Rng& r) {
           return distinct_names(kCities, k, r, [](const City& c) { return c.country; });
         }, int(kCities.size())},
        {"names", [=](int k, Rng& r) { return distinct_names(kNames, k, r, self); }, int(kNames.size())},
        {"jobs", [=](int k, Rng& r) { return distinct_names(kJobs, k, r, by_name); }, int(kJobs.size())},
        {"tools", [=](int k, Rng& r) { return distinct_names(kTools, k, r, by_name); }, int(kTools.size())},
        {"sports", [=](int k, Rng& r) { return distinct_names(kSports, k, r, by_name); }, int(kSports.size())},
        {"instruments", [=](int k, Rng& r) { return distinct_names(kInstruments, k, r, by_name); },
         int(kInstruments.size())},
        {"planets", [=](int k, Rng& r) { return distinct_names(kPlanets, k, r, by_name); }, int(kPlanets.size())},
        {"vehicles", [=](int k, Rng& r) { return distinct_names(kVehicles, k, r, by_name); }, int(kVehicles.size())},
        {"drinks", [=](int k, Rng& r) { return distinct_names(kDrinks, k, r, self); }, int(kDrinks.size())},
    };
  }

  QA simple(Rng& rng) const {
    switch (rng.below(16)) {
      case 0: {
        const auto& f = rng.below(2) ? pick(kFruits, rng) : pick(kVegetables, rng);
        return {"what color is the " + str(f.name) + " ?", "the " + str(f.name) + " is " + str(f.color) + " ."};
      }
      case 1: {
        const auto& a = pick(kAnimals, rng);
        return {"where does the " + str(a.name) + " live ?",
                "the " + str(a.name) + " lives in the " + str(a.home) + " ."};
      }
      case 2: {
        const auto& a = pick(kAnimals, rng);
        return {"what does the " + str(a.name) + " eat ?", "the " + str(a.name) + " eats " + str(a.food) + " ."};
      }
      case 3: {
        const auto& a = pick(kAnimals, rng);
        return {"what sound does the " + str(a.name) + " make ?", "the " + str(a.name) + " " + str(a.sound) + " ."};
      }
      case 4: {
        const auto& c = pick(kCities, rng);
        return {"which country is " + str(c.name) + " in ?", str(c.name) + " is in " + str(c.country) + " ."};
      }
      case 5: {
        const auto& c = pick(kCities, rng);
        return {"what is the capital of " + str(c.country) + " ?",
                "the capital of " + str(c.country) + " is " + str(c.name) + " ."};
      }
      case 6: {
        const auto& p = pick(people_, rng);
        return {"what does " + p.name + " do ?", p.name + " is a " + p.job + " ."};
      }
      case 7: {
        const auto& p = pick(people_, rng);
        return {"where does " + p.name + " live ?", p.name + " lives in " + p.city + " ."};
      }
      case 8: {
        const auto& t = pick(kTools, rng);
        return {"what is a " + str(t.name) + " used for ?", "a " + str(t.name) + " is used to " + str(t.use) + " ."};
      }
      case 9: {
        const auto i = rng.below(kPlanets.size());
        return {"which planet is " + str(kOrdinals[i]) + " from the sun ?",
                str(kPlanets[i].name) + " is the " + str(kOrdinals[i]) + " planet from the sun ."};
      }
      case 10: {
        const auto& j = pick(kJobs, rng);
        return {"where does a " + str(j.name) + " work ?",
                "a " + str(j.name) + " works in a " + str(j.place) + " ."};
      }
      case 11: {
        const auto& s = pick(kSports, rng);
        return {"what do you need for " + str(s.name) + " ?",
                "you need a " + str(s.gear) + " for " + str(s.name) + " ."};
      }
      case 12: {
        const auto i = rng.below(kDays.size());
        return {"what day comes after " + str(kDays[i]) + " ?",
                str(kDays[(i + 1) % kDays.size()]) + " comes after " + str(kDays[i]) + " ."};
      }
      case 13: {
        const auto i = rng.below(kMonths.size());
        return {"what month comes after " + str(kMonths[i]) + " ?",
                str(kMonths[(i + 1) % kMonths.size()]) + " comes after " + str(kMonths[i]) + " ."};
      }
      case 14: {
        const auto a = rng.below(10);
        const auto b = rng.below(10);
        return {"what is " + str(kNumbers[a]) + " plus " + str(kNumbers[b]) + " ?",
                str(kNumbers[a]) + " plus " + str(kNumbers[b]) + " is " + str(kNumbers[a + b + 1]) + " ."};
      }
      default: {
        const auto& p = pick(people_, rng);
        return {"what pet does " + p.name + " have ?", p.name + " has a " + p.pet + " ."};
      }
    }
  }

  QA enumeration(Rng& rng) const {
    switch (rng.below(7)) {
      case 0:
      case 1:
      case 2: {
        const auto& cat = pick(categories_, rng);
        const int k = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(7, cat.size - 1))));
        const auto items = cat.draw(k, rng);
        const std::string count = str(kNumbers[static_cast<std::size_t>(k - 1)]);
        static constexpr std::array<std::string_view, 4> kAsk{"name", "list", "can you name", "give me"};
        const std::string q = str(pick(kAsk, rng)) + " " + count + " " + str(cat.plural) + " ?";
        static constexpr std::array<std::string_view, 3> kLead{"here are", "sure , here are", ""};
        std::string lead = str(pick(kLead, rng));
        lead = lead.empty() ? "" : lead + " " + count + " " + str(cat.plural) + " : ";
        return {q, lead + join_list(items) + " ."};
      }
      case 3: {
        const auto& cat = pick(categories_, rng);
        const int k = 3 + static_cast<int>(rng.below(4));
        return {"name some " + str(cat.plural) + " ?", "some " + str(cat.plural) + " are " + join_list(cat.draw(k, rng)) + " ."};
      }
      case 4: {
        const auto& home = pick(kAnimals, rng).home;
        std::vector<std::string> items;
        for (const auto& a : kAnimals)
          if (a.home == home) items.push_back("the " + str(a.name));
        return {"which animals live in the " + str(home) + " ?",
                join_list(items) + (items.size() > 1 ? " live" : " lives") + " in the " + str(home) + " ."};
      }
      case 5: {
        switch (rng.below(4)) {
          case 0: {
            std::vector<std::string> d(kDays.begin(), kDays.end());
            return {"list the days of the week ?", "the days of the week are " + join_list(d) + " ."};
          }
          case 1: {
            std::vector<std::string> m(kMonths.begin(), kMonths.end());
            return {"list the months of the year ?", "the months are " + join_list(m) + " ."};
          }
          case 2: {
            std::vector<std::string> p;
            for (const auto& x : kPlanets) p.push_back(str(x.name));
            return {"name the planets in order ?", "the planets are " + join_list(p) + " ."};
          }
          default: {
            const auto a = rng.below(6);
            const auto b = a + 3 + rng.below(8);
            std::vector<std::string> n(kNumbers.begin() + static_cast<long>(a), kNumbers.begin() + static_cast<long>(b) + 1);
            return {"count from " + str(kNumbers[a]) + " to " + str(kNumbers[b]) + " ?", join_list(n) + " ."};
          }
        }
      }
      default: {
        const auto& color = rng.below(2) ? pick(kFruits, rng).color : pick(kVegetables, rng).color;
        std::vector<std::string> items;
        for (const auto& f : kFruits)
          if (f.color == color) items.push_back(str(f.name));
        for (const auto& v : kVegetables)
          if (v.color == color) items.push_back(str(v.name));
        return {"which foods are " + str(color) + " ?", join_list(items) + " are " + str(color) + " ."};
      }
    }
  }

  QA explanation(Rng& rng) const {
    switch (rng.below(6)) {
      case 0: {
        const auto& a = pick(kAnimals, rng);
        const std::string n = str(a.name);
        std::string ans = "the " + n + " is a " + str(a.size) + " animal . it lives in the " + str(a.home) +
                          " and eats " + str(a.food) + " . the " + n + " " + str(a.sound) + " when it is " +
                          str(pick(kFeelings, rng)) + " .";
        if (rng.below(2)) ans += " most of the day it " + str(a.moves) + " .";
        if (rng.below(2)) ans += " in " + str(pick(kSeasons, rng)) + " it stays close to its home .";
        return {"describe the " + n + " ?", ans};
      }
      case 1: {
        const auto& a = pick(kAnimals, rng);
        auto b = pick(kAnimals, rng);
        if (a.name == b.name) b = kAnimals[(static_cast<std::size_t>(&a - kAnimals.data()) + 1) % kAnimals.size()];
        const std::string an = str(a.name), bn = str(b.name);
        std::string ans = "the " + an + " lives in the " + str(a.home) + " but the " + bn + " lives in the " +
                          str(b.home) + " . the " + an + " eats " + str(a.food) + " while the " + bn + " eats " +
                          str(b.food) + " .";
        ans += a.size == b.size ? " both are " + str(a.size) + " animals ."
                                : " the " + an + " is " + str(a.size) + " and the " + bn + " is " + str(b.size) + " .";
        return {"compare the " + an + " and the " + bn + " ?", ans};
      }
      case 2: {
        const auto& a = pick(kAnimals, rng);
        const std::string n = str(a.name);
        return {"why does the " + n + " live in the " + str(a.home) + " ?",
                "the " + n + " lives in the " + str(a.home) + " because it can find " + str(a.food) +
                    " there . the " + str(a.home) + " also keeps it safe . so the " + n + " stays there ."};
      }
      case 3: {
        const auto& j = pick(kJobs, rng);
        const std::string n = str(j.name);
        return {"explain what a " + n + " does ?",
                "a " + n + " works in a " + str(j.place) + " . every day a " + n + " " + str(j.activity) +
                    " . it is an important job and many people need a " + n + " ."};
      }
      case 4: {
        const auto& p = pick(people_, rng);
        return {"who is " + p.name + " ?",
                p.name + " is a " + p.job + " who lives in " + p.city + " . " + p.name + " has a " + p.pet +
                    " and likes the color " + p.color + " . on " + str(pick(kDays, rng)) + " " + p.name +
                    " plays the " + p.instrument + " and after that " + p.sport + " ."};
      }
      default: {
        const auto i = rng.below(kPlanets.size());
        const std::string n = str(kPlanets[i].name);
        return {"tell me about the planet " + n + " ?",
                n + " is the " + str(kOrdinals[i]) + " planet from the sun . it is a " + str(kPlanets[i].size) +
                    " planet . people can see " + n + " in the night sky when the weather is clear ."};
      }
    }
  }

  QA story(Rng& rng, int min_tokens) const {
    const auto& p = pick(people_, rng);
    const std::string n = p.name;
    std::string text;
    auto count = [](const std::string& s) { return static_cast<int>(tokenize(s).size()); };
    text = "once upon a time there was a " + p.job + " called " + n + " who lived in " + p.city + " .";
    while (count(text) < min_tokens || rng.below(3) == 0) {
      const auto& friend_ = pick(people_, rng);
      const auto& a = pick(kAnimals, rng);
      const auto& f = pick(kFruits, rng);
      const auto& c = pick(kCities, rng);
      const auto& v = pick(kVehicles, rng);
      std::string s;
      switch (rng.below(12)) {
        case 0: s = "on " + str(pick(kDays, rng)) + " the weather was " + str(pick(kWeather, rng)) + " ."; break;
        case 1: s = n + " saw a " + str(a.name) + " near the " + str(a.home) + " and the " + str(a.name) + " " + str(a.sound) + " ."; break;
        case 2: s = n + " ate a " + str(f.name) + " and drank some " + str(pick(kDrinks, rng)) + " ."; break;
        case 3: s = "then " + n + " met " + friend_.name + " , who is a " + friend_.job + " ."; break;
        case 4: s = "they played " + str(pick(kSports, rng).name) + " together in the park ."; break;
        case 5: s = friend_.name + " played the " + str(pick(kInstruments, rng).name) + " and everyone felt " + str(pick(kFeelings, rng)) + " ."; break;
        case 6: s = "after that they took the " + str(v.name) + " to " + str(c.name) + " , a city with " + str(c.feature) + " ."; break;
        case 7: s = "at night " + n + " looked at " + str(pick(kPlanets, rng).name) + " in the sky ."; break;
        case 8: s = "in " + str(pick(kMonths, rng)) + " " + n + " bought a " + str(pick(kTools, rng).name) + " to " + str(pick(kTools, rng).use) + " ."; break;
        case 9: s = "the " + str(pick(kColors, rng)) + " " + str(v.name) + " went along the " + str(v.route) + " ."; break;
        case 10: s = n + " was " + str(pick(kFeelings, rng)) + " because the " + p.pet + " was sleeping ."; break;
        default: s = "later " + friend_.name + " gave " + n + " a " + str(pick(kColors, rng)) + " " + str(pick(kVegetables, rng).name) + " ."; break;
      }
      text += " " + s;
      if (count(text) > min_tokens + 80) break;
    }
    text += " the end .";
    return {"tell me a story about " + n + " ?", text};
  }

  std::vector<ToyTemplate> templates() const {
    return {
        {"the cat is red the cat is red the cat is", "red", "blue"},
        {"anna anna anna is a teacher anna anna anna is a", "teacher", "doctor"},
        {"name two fruits ? apple , pear , apple , pear , apple ,", "pear", "grape"},
        {"rome is in italy rome is in italy rome is in", "italy", "france"},
        {"monday tuesday monday tuesday monday tuesday monday", "tuesday", "wednesday"},
        {"the wolf eats meat . the wolf eats meat . the wolf eats", "meat", "grass"},
        {"red blue green red blue green red blue", "green", "yellow"},
        {"jack lives in oslo jack lives in oslo jack lives in", "oslo", "paris"},
    };
  }

  Words lexicon() const {
    std::set<std::string> words;
    auto add = [&](std::string_view s) {
      for (auto& w : tokenize(s)) words.insert(w);
    };
    for (const auto& a : kAnimals) {
      add(a.name), add(a.home), add(a.food), add(a.size), add(a.sound), add(a.moves);
    }
    for (const auto& x : kFruits) add(x.name), add(x.color);
    for (const auto& x : kVegetables) add(x.name), add(x.color);
    for (auto x : kColors) add(x);
    for (const auto& x : kCities) add(x.name), add(x.country), add(x.feature);
    for (auto x : kNames) add(x);
    for (const auto& x : kJobs) add(x.name), add(x.place), add(x.activity);
    for (const auto& x : kTools) add(x.name), add(x.use);
    for (const auto& x : kSports) add(x.name), add(x.gear);
    for (const auto& x : kInstruments) add(x.name), add(x.family);
    for (const auto& x : kPlanets) add(x.name), add(x.size);
    for (const auto& x : kVehicles) add(x.name), add(x.route);
    for (auto x : kDrinks) add(x);
    for (auto x : kDays) add(x);
    for (auto x : kMonths) add(x);
    for (auto x : kSeasons) add(x);
    for (auto x : kNumbers) add(x);
    for (auto x : kOrdinals) add(x);
    for (auto x : kWeather) add(x);
    for (auto x : kFeelings) add(x);
    for (const auto& c : categories_) add(c.plural);
    return Words(words.begin(), words.end());
  }

 private:
  Rng world_rng_;
  std::vector<Person> people_;
  std::vector<Category> categories_;
};

}  // namespace

std::string to_string(QuestionSet q) {
  switch (q) {
    case QuestionSet::EQ: return "EQ";
    case QuestionSet::AQ: return "AQ";
    case QuestionSet::NQ: return "NQ";
  }
  return "?";
}

QuestionSet question_set_from_string(const std::string& s) {
  if (s == "EQ" || s == "eq") return QuestionSet::EQ;
  if (s == "AQ" || s == "aq") return QuestionSet::AQ;
  if (s == "NQ" || s == "nq") return QuestionSet::NQ;
  throw ParseError("unknown question set: " + s);
}

ToyWorld make_toy_world(const ToyWorldOptions& options) {
  Generator gen(options.seed);
  ToyWorld world;

  Rng rng(derive_seed(options.seed, 2));
  long next_id = 0;
  auto emit = [&](const QA& qa, std::string_view kind) {
    world.corpus.push_back({std::string(kind) + "-" + std::to_string(next_id++), qa.question, qa.answer});
  };
  for (int i = 0; i < options.simple_answers; ++i) emit(gen.simple(rng), "simple");
  for (int i = 0; i < options.enumeration_answers; ++i) emit(gen.enumeration(rng), "enum");
  for (int i = 0; i < options.explanation_answers; ++i) emit(gen.explanation(rng), "explain");
  for (int i = 0; i < options.story_answers; ++i) emit(gen.story(rng, 150), "story");
  // Interleave kinds so that corpus order carries no structure.
  Rng order(derive_seed(options.seed, 3));
  order.shuffle(world.corpus.begin(), world.corpus.end());

  Rng qrng(derive_seed(options.seed, 4));
  for (auto set : {QuestionSet::EQ, QuestionSet::AQ, QuestionSet::NQ}) {
    std::set<std::string> seen;
    int attempts = 0;
    while (static_cast<int>(seen.size()) < options.questions_per_set && attempts++ < 100000) {
      const QA qa = set == QuestionSet::EQ   ? gen.enumeration(qrng)
                    : set == QuestionSet::AQ ? gen.explanation(qrng)
                                             : gen.simple(qrng);
      if (seen.insert(qa.question).second) world.questions.push_back({set, qa.question});
    }
  }

  world.templates = gen.templates();

  std::set<std::string> lex;
  for (const auto& w : gen.lexicon()) lex.insert(w);
  for (const auto& s : world.corpus) {
    for (auto& w : tokenize(s.question)) lex.insert(w);
    for (auto& w : tokenize(s.answer)) lex.insert(w);
  }
  for (const auto& q : world.questions)
    for (auto& w : tokenize(q.text)) lex.insert(w);
  for (const auto& t : world.templates) {
    for (auto& w : tokenize(t.prompt)) lex.insert(w);
    lex.insert(t.correct);
    lex.insert(t.incorrect);
  }
  world.lexicon.assign(lex.begin(), lex.end());
  return world;
}

void save_questions(const std::vector<ToyQuestion>& questions, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write questions " + path);
  for (const auto& q : questions) out << nlohmann::json{{"set", to_string(q.set)}, {"question", q.text}}.dump() << '\n';
}

std::vector<ToyQuestion> load_questions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read questions " + path);
  std::vector<ToyQuestion> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({question_set_from_string(j.at("set").get<std::string>()), j.at("question").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ToyQuestion> filter_questions(const std::vector<ToyQuestion>& all, QuestionSet set) {
  std::vector<ToyQuestion> out;
  for (const auto& q : all)
    if (q.set == set) out.push_back(q);
  return out;
}

}  // namespace duc
