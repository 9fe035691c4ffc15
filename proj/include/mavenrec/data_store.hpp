#pragma once

// Interaction data: user-item and group-item records plus group rosters,
// loaded from CSV, split leave-one-out, and expanded into pairwise training
// triples with sampled negatives.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mavenrec/random.hpp"

namespace mavenrec {

using Id = std::size_t;

enum class EntityKind { user, group };

inline const char* to_string(EntityKind k) { return k == EntityKind::user ? "user" : "group"; }

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bidirectional map between external string ids and dense internal ids.
class IdMap {
 public:
  IdMap() = default;

  /// Internal ids follow the sorted order of the external ids.
  static IdMap from_ids(std::set<std::string> ids) {
    IdMap m;
    m.external_.assign(ids.begin(), ids.end());
    for (Id i = 0; i < m.external_.size(); ++i) m.index_.emplace(m.external_[i], i);
    return m;
  }

  std::size_t size() const { return external_.size(); }
  const std::string& external(Id id) const { return external_.at(id); }
  std::optional<Id> find(const std::string& ext) const {
    auto it = index_.find(ext);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  Id at(const std::string& ext) const {
    auto id = find(ext);
    if (!id) throw std::out_of_range("unknown id '" + ext + "'");
    return *id;
  }
  const std::vector<std::string>& externals() const { return external_; }

  bool operator==(const IdMap& o) const { return external_ == o.external_; }

 private:
  std::vector<std::string> external_;
  std::unordered_map<std::string, Id> index_;
};

struct Interaction {
  Id entity = 0;
  Id item = 0;
  std::optional<std::int64_t> timestamp;

  bool operator==(const Interaction&) const = default;
};

/// Immutable after construction. Interactions are kept sorted by
/// (entity, item); member lists are sorted by internal user id.
class InteractionStore {
 public:
  InteractionStore() = default;

  InteractionStore(IdMap users, IdMap items, IdMap groups, std::vector<Interaction> user_item,
                   std::vector<Interaction> group_item, std::vector<std::vector<Id>> members)
      : users_(std::move(users)),
        items_(std::move(items)),
        groups_(std::move(groups)),
        user_item_(std::move(user_item)),
        group_item_(std::move(group_item)),
        members_(std::move(members)) {
    auto by_key = [](const Interaction& a, const Interaction& b) {
      return std::tie(a.entity, a.item) < std::tie(b.entity, b.item);
    };
    std::sort(user_item_.begin(), user_item_.end(), by_key);
    std::sort(group_item_.begin(), group_item_.end(), by_key);
    validate();
    index(user_item_, users_.size(), user_pos_);
    index(group_item_, groups_.size(), group_pos_);
  }

  const IdMap& users() const { return users_; }
  const IdMap& items() const { return items_; }
  const IdMap& groups() const { return groups_; }
  std::size_t num_users() const { return users_.size(); }
  std::size_t num_items() const { return items_.size(); }
  std::size_t num_groups() const { return groups_.size(); }

  const std::vector<Interaction>& user_item() const { return user_item_; }
  const std::vector<Interaction>& group_item() const { return group_item_; }
  const std::vector<Interaction>& interactions(EntityKind k) const {
    return k == EntityKind::user ? user_item_ : group_item_;
  }
  const std::vector<Id>& members(Id group) const { return members_.at(group); }
  const std::vector<std::vector<Id>>& membership() const { return members_; }

  /// Sorted item ids the entity interacted with.
  const std::vector<Id>& positives(EntityKind k, Id entity) const {
    return (k == EntityKind::user ? user_pos_ : group_pos_).at(entity);
  }
  bool has_interaction(EntityKind k, Id entity, Id item) const {
    const auto& p = positives(k, entity);
    return std::binary_search(p.begin(), p.end(), item);
  }
  std::size_t num_entities(EntityKind k) const { return k == EntityKind::user ? num_users() : num_groups(); }

  double mean_group_size() const {
    if (members_.empty()) return 0.0;
    std::size_t total = 0;
    for (const auto& m : members_) total += m.size();
    return static_cast<double>(total) / static_cast<double>(members_.size());
  }

  /// Same id space, different interactions (used for splits).
  InteractionStore with_interactions(std::vector<Interaction> user_item, std::vector<Interaction> group_item) const {
    return InteractionStore(users_, items_, groups_, std::move(user_item), std::move(group_item), members_);
  }

  bool operator==(const InteractionStore& o) const {
    return users_ == o.users_ && items_ == o.items_ && groups_ == o.groups_ && user_item_ == o.user_item_ &&
           group_item_ == o.group_item_ && members_ == o.members_;
  }

 private:
  void validate() const {
    for (const auto& r : user_item_) {
      if (r.entity >= users_.size() || r.item >= items_.size()) throw DataError("user-item record references unknown id");
    }
    for (const auto& r : group_item_) {
      if (r.entity >= groups_.size() || r.item >= items_.size()) throw DataError("group-item record references unknown id");
    }
    if (members_.size() != groups_.size()) throw DataError("membership table does not cover every group");
    for (Id g = 0; g < members_.size(); ++g) {
      const auto& m = members_[g];
      if (m.empty()) throw DataError("group '" + groups_.external(g) + "' has no members");
      if (!std::is_sorted(m.begin(), m.end()) || std::adjacent_find(m.begin(), m.end()) != m.end()) {
        throw DataError("group '" + groups_.external(g) + "' has unsorted or duplicate members");
      }
      if (m.back() >= users_.size()) throw DataError("membership references unknown user");
    }
  }

  static void index(const std::vector<Interaction>& rows, std::size_t n, std::vector<std::vector<Id>>& out) {
    out.assign(n, {});
    for (const auto& r : rows) out[r.entity].push_back(r.item);
  }

  IdMap users_, items_, groups_;
  std::vector<Interaction> user_item_, group_item_;
  std::vector<std::vector<Id>> members_;
  std::vector<std::vector<Id>> user_pos_, group_pos_;
};

// ---------------------------------------------------------------------------
// CSV

struct LoadStats {
  std::size_t duplicate_user_item = 0;
  std::size_t duplicate_group_item = 0;
  std::size_t duplicate_membership = 0;
};

namespace detail {

struct RawRow {
  std::string entity, item;
  std::optional<std::int64_t> timestamp;
};

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Reads `first,second[,timestamp]` rows; the header must name exactly those
/// columns.
inline std::vector<RawRow> read_pairs(const std::filesystem::path& path, const std::string& first,
                                      const std::string& second, bool allow_timestamp) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open file");
  auto fail = [&](std::size_t line, const std::string& why) -> DataError {
    return DataError(path.string() + ":" + std::to_string(line) + ": " + why);
  };
  std::string line;
  std::size_t lineno = 0;
  std::vector<RawRow> rows;
  bool has_ts = false;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() < 2 || fields[0] != first || fields[1] != second) {
        throw fail(lineno, "header must start with '" + first + "," + second + "'");
      }
      if (fields.size() == 3 && allow_timestamp && fields[2] == "timestamp") {
        has_ts = true;
      } else if (fields.size() != 2) {
        throw fail(lineno, "unexpected column '" + fields[2] + "'");
      }
      continue;
    }
    const std::size_t want = has_ts ? 3 : 2;
    if (fields.size() != want) {
      throw fail(lineno, "expected " + std::to_string(want) + " fields, found " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw fail(lineno, "empty id");
    RawRow r{fields[0], fields[1], std::nullopt};
    if (has_ts && !fields[2].empty()) {
      std::size_t used = 0;
      try {
        r.timestamp = std::stoll(fields[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[2].size()) throw fail(lineno, "timestamp '" + fields[2] + "' is not an integer");
    }
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw fail(1, "missing header row");
  return rows;
}

// Collapses repeated (entity, item) pairs, keeping the earliest timestamp so
// the result does not depend on row order.
inline std::vector<Interaction> dedupe(std::vector<Interaction> rows, std::size_t& duplicates) {
  std::sort(rows.begin(), rows.end(), [](const Interaction& a, const Interaction& b) {
    if (a.entity != b.entity) return a.entity < b.entity;
    if (a.item != b.item) return a.item < b.item;
    if (a.timestamp.has_value() != b.timestamp.has_value()) return a.timestamp.has_value();
    return a.timestamp < b.timestamp;
  });
  std::vector<Interaction> out;
  for (auto& r : rows) {
    if (!out.empty() && out.back().entity == r.entity && out.back().item == r.item) {
      ++duplicates;
      continue;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace detail

inline InteractionStore load(const std::filesystem::path& user_item_path, const std::filesystem::path& group_item_path,
                             const std::filesystem::path& membership_path, LoadStats* stats = nullptr) {
  auto ui = detail::read_pairs(user_item_path, "user_id", "item_id", true);
  auto gi = detail::read_pairs(group_item_path, "group_id", "item_id", true);
  auto ms = detail::read_pairs(membership_path, "group_id", "user_id", false);

  std::set<std::string> users, items, groups, groups_with_members;
  for (const auto& r : ui) {
    users.insert(r.entity);
    items.insert(r.item);
  }
  for (const auto& r : gi) {
    groups.insert(r.entity);
    items.insert(r.item);
  }
  for (const auto& r : ms) {
    groups.insert(r.entity);
    groups_with_members.insert(r.entity);
    users.insert(r.item);
  }
  for (const auto& g : groups) {
    if (!groups_with_members.contains(g)) {
      throw DataError(membership_path.string() + ": group '" + g + "' has no members");
    }
  }

  auto umap = IdMap::from_ids(std::move(users));
  auto imap = IdMap::from_ids(std::move(items));
  auto gmap = IdMap::from_ids(std::move(groups));

  LoadStats local;
  auto convert = [&](const std::vector<detail::RawRow>& raw, const IdMap& ent) {
    std::vector<Interaction> out;
    out.reserve(raw.size());
    for (const auto& r : raw) out.push_back({ent.at(r.entity), imap.at(r.item), r.timestamp});
    return out;
  };
  auto user_item = detail::dedupe(convert(ui, umap), local.duplicate_user_item);
  auto group_item = detail::dedupe(convert(gi, gmap), local.duplicate_group_item);

  std::vector<std::vector<Id>> members(gmap.size());
  for (const auto& r : ms) members[gmap.at(r.entity)].push_back(umap.at(r.item));
  for (auto& m : members) {
    std::sort(m.begin(), m.end());
    auto end = std::unique(m.begin(), m.end());
    local.duplicate_membership += static_cast<std::size_t>(m.end() - end);
    m.erase(end, m.end());
  }
  if (stats) *stats = local;
  return InteractionStore(std::move(umap), std::move(imap), std::move(gmap), std::move(user_item),
                          std::move(group_item), std::move(members));
}

inline InteractionStore load_dir(const std::filesystem::path& dir, LoadStats* stats = nullptr) {
  return load(dir / "user_item.csv", dir / "group_item.csv", dir / "membership.csv", stats);
}

/// Writes the three CSVs in canonical order. Timestamps are written only when
/// every record of that file carries one.
inline void save_dir(const InteractionStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& head, const std::vector<Interaction>& rows,
                   const IdMap& ent) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError((dir / name).string() + ": cannot write");
    const bool ts = !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const Interaction& r) {
      return r.timestamp.has_value();
    });
    out << head << (ts ? ",timestamp" : "") << '\n';
    for (const auto& r : rows) {
      out << ent.external(r.entity) << ',' << store.items().external(r.item);
      if (ts) out << ',' << *r.timestamp;
      out << '\n';
    }
  };
  write("user_item.csv", "user_id,item_id", store.user_item(), store.users());
  write("group_item.csv", "group_id,item_id", store.group_item(), store.groups());
  std::ofstream out(dir / "membership.csv", std::ios::binary);
  out << "group_id,user_id\n";
  for (Id g = 0; g < store.num_groups(); ++g)
    for (Id u : store.members(g)) out << store.groups().external(g) << ',' << store.users().external(u) << '\n';
}

// ---------------------------------------------------------------------------
// Leave-one-out split

struct TestCase {
  EntityKind kind = EntityKind::group;
  Id entity = 0;
  Id item = 0;

  bool operator==(const TestCase&) const = default;
};

struct Split {
  InteractionStore train;
  std::vector<TestCase> group_test;
  std::vector<TestCase> user_test;
  std::size_t skipped_groups = 0;  // fewer than two interactions
  std::size_t skipped_users = 0;
};

/// Holds out one interaction per entity with at least two: the latest by
/// timestamp when every record of the entity has one, otherwise a seeded
/// uniform pick.
inline Split split_leave_one_out(const InteractionStore& store, std::uint64_t seed) {
  Split out;
  auto run = [&](EntityKind kind, std::vector<Interaction>& keep, std::vector<TestCase>& test, std::size_t& skipped) {
    std::mt19937_64 rng(derive_seed(seed, {0x5911ULL, static_cast<std::uint64_t>(kind)}));
    const auto& rows = store.interactions(kind);
    std::size_t begin = 0;
    while (begin < rows.size()) {
      std::size_t end = begin;
      while (end < rows.size() && rows[end].entity == rows[begin].entity) ++end;
      const std::size_t n = end - begin;
      if (n < 2) {
        ++skipped;
        keep.insert(keep.end(), rows.begin() + static_cast<std::ptrdiff_t>(begin),
                    rows.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
        continue;
      }
      const bool timed = std::all_of(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                     rows.begin() + static_cast<std::ptrdiff_t>(end),
                                     [](const Interaction& r) { return r.timestamp.has_value(); });
      std::size_t pick = begin;
      if (timed) {
        // latest; ties go to the larger item id
        for (std::size_t i = begin; i < end; ++i)
          if (*rows[i].timestamp >= *rows[pick].timestamp) pick = i;
      } else {
        pick = begin + std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      }
      for (std::size_t i = begin; i < end; ++i) {
        if (i != pick) keep.push_back(rows[i]);
      }
      test.push_back({kind, rows[pick].entity, rows[pick].item});
      begin = end;
    }
    // entities with no interactions at all are neither tested nor counted
  };
  std::vector<Interaction> ui, gi;
  run(EntityKind::group, gi, out.group_test, out.skipped_groups);
  run(EntityKind::user, ui, out.user_test, out.skipped_users);
  out.train = store.with_interactions(std::move(ui), std::move(gi));
  return out;
}

// ---------------------------------------------------------------------------
// Negative sampling

/// k items the entity has not interacted with, distinct within the call while
/// enough eligible items exist; surplus draws repeat uniformly.
template <class Rng>
std::vector<Id> sample_negatives(const InteractionStore& train, EntityKind kind, Id entity, std::size_t k, Rng& rng) {
  const auto& pos = train.positives(kind, entity);
  const std::size_t n_items = train.num_items();
  const std::size_t eligible = n_items - pos.size();
  if (eligible == 0) {
    throw DataError(std::string(to_string(kind)) + " '" +
                    (kind == EntityKind::user ? train.users() : train.groups()).external(entity) +
                    "' has interacted with every item; no negatives available");
  }
  std::vector<Id> out;
  out.reserve(k);
  std::uniform_int_distribution<Id> any_item(0, n_items - 1);
  const std::size_t distinct = std::min(k, eligible);
  if (distinct * 4 <= eligible) {
    // sparse case: rejection sampling
    while (out.size() < distinct) {
      Id c = any_item(rng);
      if (std::binary_search(pos.begin(), pos.end(), c)) continue;
      if (std::find(out.begin(), out.end(), c) != out.end()) continue;
      out.push_back(c);
    }
  } else {
    std::vector<Id> pool;
    pool.reserve(eligible);
    for (Id i = 0, p = 0; i < n_items; ++i) {
      if (p < pos.size() && pos[p] == i) {
        ++p;
        continue;
      }
      pool.push_back(i);
    }
    for (std::size_t i = 0; i < distinct; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
  }
  while (out.size() < k) {
    Id c = any_item(rng);
    if (!std::binary_search(pos.begin(), pos.end(), c)) out.push_back(c);
  }
  return out;
}

inline std::vector<Id> sample_negatives(const InteractionStore& train, EntityKind kind, Id entity, std::size_t k,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_negatives(train, kind, entity, k, rng);
}

// ---------------------------------------------------------------------------
// Training triples

struct Triple {
  EntityKind kind = EntityKind::group;
  Id entity = 0;
  Id positive = 0;
  Id negative = 0;

  bool operator==(const Triple&) const = default;
};

struct TrainTriples {
  std::vector<Triple> entries;
};

/// One triple per (positive interaction x sampled negative) for both group-item
/// and user-item records, shuffled by seed.
inline TrainTriples make_train_triples(const InteractionStore& train, std::size_t negatives_per_positive,
                                       std::uint64_t seed) {
  if (negatives_per_positive < 1) throw std::invalid_argument("negatives_per_positive must be at least 1");
  std::mt19937_64 rng(seed);
  TrainTriples out;
  out.entries.reserve((train.user_item().size() + train.group_item().size()) * negatives_per_positive);
  for (EntityKind kind : {EntityKind::group, EntityKind::user}) {
    for (const auto& r : train.interactions(kind)) {
      for (Id neg : sample_negatives(train, kind, r.entity, negatives_per_positive, rng)) {
        out.entries.push_back({kind, r.entity, r.item, neg});
      }
    }
  }
  std::shuffle(out.entries.begin(), out.entries.end(), rng);
  return out;
}

}  // namespace mavenrec
