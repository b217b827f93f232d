#include "acg/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_set>
#include <utility>

#include "acg/errors.hpp"

namespace acg::world {

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::North: return "north";
    case Direction::South: return "south";
    case Direction::East: return "east";
    case Direction::West: return "west";
  }
  return "?";
}

Direction opposite(Direction d) {
  switch (d) {
    case Direction::North: return Direction::South;
    case Direction::South: return Direction::North;
    case Direction::East: return Direction::West;
    case Direction::West: return Direction::East;
  }
  return d;
}

std::string_view to_string(ObjectKind k) {
  switch (k) {
    case ObjectKind::Container: return "container";
    case ObjectKind::Supporter: return "supporter";
    case ObjectKind::Portable: return "portable";
    case ObjectKind::Food: return "food";
    case ObjectKind::Key: return "key";
    case ObjectKind::Door: return "door";
  }
  return "?";
}

bool is_carriable(ObjectKind k) { return k == ObjectKind::Portable || k == ObjectKind::Food || k == ObjectKind::Key; }

std::string Object::display_name() const { return text::join(name); }

const Object& GameState::object(int id) const {
  if (id < 0 || id >= static_cast<int>(objects.size())) {
    throw GrammarError("unknown object id " + std::to_string(id));
  }
  return objects[static_cast<std::size_t>(id)];
}

const Exit* GameState::exit(Direction d) const {
  for (const auto& e : current_room().exits) {
    if (e.direction == d) return &e;
  }
  return nullptr;
}

std::vector<int> GameState::inventory() const {
  std::vector<int> out;
  for (const auto& o : objects) {
    if (o.location.kind == Location::Kind::Inventory) out.push_back(o.id);
  }
  return out;
}

std::uint64_t GameState::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  feed(static_cast<std::uint64_t>(player_room));
  for (const auto& o : objects) {
    feed(static_cast<std::uint64_t>(o.location.kind));
    feed(static_cast<std::uint64_t>(static_cast<std::int64_t>(o.location.id)));
    feed((o.open ? 1u : 0u) | (o.locked ? 2u : 0u));
  }
  return h;
}

namespace {

bool contains_subsequence(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  return find_span(hay, needle) >= 0;
}

bool door_adjacent(const GameState& s, int door) {
  for (const auto& e : s.current_room().exits) {
    if (e.door == door) return true;
  }
  return false;
}

bool on_floor(const GameState& s, const Object& o) {
  return o.location.kind == Location::Kind::Room && o.location.id == s.player_room;
}

// Visible in the current room, not counting the inventory.
bool visible(const GameState& s, const Object& o) {
  switch (o.location.kind) {
    case Location::Kind::Room: return o.location.id == s.player_room;
    case Location::Kind::On: return on_floor(s, s.object(o.location.id));
    case Location::Kind::In: {
      const Object& holder = s.object(o.location.id);
      return on_floor(s, holder) && holder.open;
    }
    case Location::Kind::Doorway: return door_adjacent(s, o.id);
    default: return false;
  }
}

// Physically in the current room (hidden contents included) or carried.
bool present(const GameState& s, const Object& o) {
  switch (o.location.kind) {
    case Location::Kind::Room: return o.location.id == s.player_room;
    case Location::Kind::On:
    case Location::Kind::In: return on_floor(s, s.object(o.location.id));
    case Location::Kind::Doorway: return door_adjacent(s, o.id);
    case Location::Kind::Inventory: return true;
    default: return false;
  }
}

bool carried(const Object& o) { return o.location.kind == Location::Kind::Inventory; }

bool reachable(const GameState& s, const Object& o) { return carried(o) || visible(s, o); }

std::string with_article(const Object& o) { return "a " + o.display_name(); }

std::string list_phrase(const GameState& s, const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += (i + 1 == ids.size()) ? " and " : " , ";
    out += with_article(s.object(ids[i]));
  }
  return out;
}

std::vector<int> held_by(const GameState& s, Location::Kind kind, int holder) {
  std::vector<int> out;
  for (const auto& o : s.objects) {
    if (o.location.kind == kind && o.location.id == holder) out.push_back(o.id);
  }
  return out;
}

std::string_view status_word(const Object& o) {
  if (o.locked) return "locked";
  return o.open ? "open" : "closed";
}

}  // namespace

void check_invariants(const GameState& s) {
  const int n = static_cast<int>(s.objects.size());
  if (s.player_room < 0 || s.player_room >= static_cast<int>(s.rooms.size())) {
    throw ConsistencyError("player outside every room");
  }
  std::set<std::vector<std::string>> names;
  for (int i = 0; i < n; ++i) {
    const Object& o = s.objects[static_cast<std::size_t>(i)];
    if (o.id != i) throw ConsistencyError("object ids must be dense");
    if (o.name.empty()) throw ConsistencyError("object without a name");
    if (!names.insert(o.name).second) throw ConsistencyError("duplicate object name: " + o.display_name());
    if (o.locked && o.open) throw ConsistencyError(o.display_name() + " is open and locked");
    if (o.open && !o.openable) throw ConsistencyError(o.display_name() + " is open but not openable");
    if (o.locked && !o.lockable) throw ConsistencyError(o.display_name() + " is locked but not lockable");
    if (o.lockable && !o.openable) throw ConsistencyError(o.display_name() + " is lockable but not openable");
    if (o.lockable && (o.key_id < 0 || o.key_id >= n || s.objects[static_cast<std::size_t>(o.key_id)].kind != ObjectKind::Key)) {
      throw ConsistencyError(o.display_name() + " has no matching key");
    }
    if ((o.kind == ObjectKind::Door) != (o.location.kind == Location::Kind::Doorway)) {
      throw ConsistencyError(o.display_name() + " has an invalid location for its kind");
    }
    // Walk the containment chain; it must end at a room, the inventory
    // or nowhere within n steps.
    Location loc = o.location;
    int steps = 0;
    while (loc.kind == Location::Kind::In || loc.kind == Location::Kind::On) {
      if (loc.id < 0 || loc.id >= n) throw ConsistencyError(o.display_name() + " held by a missing object");
      const Object& holder = s.objects[static_cast<std::size_t>(loc.id)];
      const auto expected = loc.kind == Location::Kind::In ? ObjectKind::Container : ObjectKind::Supporter;
      if (holder.kind != expected) throw ConsistencyError(o.display_name() + " held by a non-holder");
      if (!is_carriable(o.kind)) throw ConsistencyError(o.display_name() + " cannot be held");
      if (++steps > n || loc.id == o.id) throw ConsistencyError("containment cycle at " + o.display_name());
      loc = holder.location;
    }
    if (loc.kind == Location::Kind::Room && (loc.id < 0 || loc.id >= static_cast<int>(s.rooms.size()))) {
      throw ConsistencyError(o.display_name() + " in a missing room");
    }
    if (loc.kind == Location::Kind::Inventory && !is_carriable(o.kind) && steps == 0) {
      throw ConsistencyError(o.display_name() + " carried but not carriable");
    }
  }
  for (const auto& a : s.objects) {
    for (const auto& b : s.objects) {
      if (a.id != b.id && contains_subsequence(a.name, b.name)) {
        throw ConsistencyError("name '" + b.display_name() + "' occurs inside '" + a.display_name() + "'");
      }
    }
  }
  for (const auto& r : s.rooms) {
    std::set<Direction> dirs;
    for (const auto& e : r.exits) {
      if (!dirs.insert(e.direction).second) throw ConsistencyError("duplicate exit in " + r.name);
      if (e.to_room < 0 || e.to_room >= static_cast<int>(s.rooms.size())) {
        throw ConsistencyError("exit to a missing room from " + r.name);
      }
      if (e.door >= 0 && (e.door >= n || s.objects[static_cast<std::size_t>(e.door)].kind != ObjectKind::Door)) {
        throw ConsistencyError("exit with an invalid door in " + r.name);
      }
    }
  }
}

int object_arity(Verb v) {
  switch (v) {
    case Verb::Go: return 0;
    case Verb::Open:
    case Verb::Close:
    case Verb::Take:
    case Verb::Drop:
    case Verb::Eat: return 1;
    case Verb::TakeFrom:
    case Verb::PutOn:
    case Verb::InsertInto:
    case Verb::Lock:
    case Verb::Unlock: return 2;
  }
  return 0;
}

void check_grammar(const GameState& s, const Command& c) {
  if (static_cast<int>(c.objects.size()) != object_arity(c.verb)) {
    throw GrammarError("wrong number of objects for verb");
  }
  if ((c.verb == Verb::Go) != c.direction.has_value()) {
    throw GrammarError(c.verb == Verb::Go ? "go needs a direction" : "only go takes a direction");
  }
  for (int id : c.objects) s.object(id);
  if (c.objects.size() == 2 && c.objects[0] == c.objects[1]) throw GrammarError("the same object fills both slots");
}

std::string render(const GameState& s, const Command& c) {
  check_grammar(s, c);
  auto name = [&](std::size_t slot) { return s.object(c.objects[slot]).display_name(); };
  switch (c.verb) {
    case Verb::Go: return "go " + std::string(to_string(*c.direction));
    case Verb::Open: return "open " + name(0);
    case Verb::Close: return "close " + name(0);
    case Verb::Take: return "take " + name(0);
    case Verb::Drop: return "drop " + name(0);
    case Verb::Eat: return "eat " + name(0);
    case Verb::TakeFrom: return "take " + name(0) + " from " + name(1);
    case Verb::PutOn: return "put " + name(0) + " on " + name(1);
    case Verb::InsertInto: return "insert " + name(0) + " into " + name(1);
    case Verb::Lock: return "lock " + name(0) + " with " + name(1);
    case Verb::Unlock: return "unlock " + name(0) + " with " + name(1);
  }
  return {};
}

ApplyResult apply(const GameState& s, const Command& c) {
  check_grammar(s, c);
  ApplyResult r{s, false};
  auto& objs = r.state.objects;
  auto obj = [&](std::size_t slot) -> const Object& { return s.object(c.objects[slot]); };
  auto target = [&](std::size_t slot) -> Object& { return objs[static_cast<std::size_t>(c.objects[slot])]; };

  switch (c.verb) {
    case Verb::Go: {
      const Exit* e = s.exit(*c.direction);
      if (e == nullptr) break;
      if (e->door >= 0 && !s.object(e->door).open) break;
      r.state.player_room = e->to_room;
      r.changed = true;
      break;
    }
    case Verb::Open: {
      const Object& x = obj(0);
      if (!reachable(s, x) || !x.openable || x.open || x.locked) break;
      target(0).open = true;
      r.changed = true;
      break;
    }
    case Verb::Close: {
      const Object& x = obj(0);
      if (!reachable(s, x) || !x.openable || !x.open) break;
      target(0).open = false;
      r.changed = true;
      break;
    }
    case Verb::Take: {
      const Object& x = obj(0);
      if (!is_carriable(x.kind) || !on_floor(s, x)) break;
      target(0).location = Location::inventory();
      r.changed = true;
      break;
    }
    case Verb::TakeFrom: {
      const Object& x = obj(0);
      const Object& y = obj(1);
      if (!is_carriable(x.kind) || !visible(s, y)) break;
      const bool on_it = y.kind == ObjectKind::Supporter && x.location == Location::on(y.id);
      const bool in_it = y.kind == ObjectKind::Container && y.open && x.location == Location::in(y.id);
      if (!on_it && !in_it) break;
      target(0).location = Location::inventory();
      r.changed = true;
      break;
    }
    case Verb::PutOn: {
      const Object& x = obj(0);
      const Object& y = obj(1);
      if (!carried(x) || y.kind != ObjectKind::Supporter || !visible(s, y)) break;
      target(0).location = Location::on(y.id);
      r.changed = true;
      break;
    }
    case Verb::InsertInto: {
      const Object& x = obj(0);
      const Object& y = obj(1);
      if (!carried(x) || y.kind != ObjectKind::Container || !y.open || !visible(s, y)) break;
      target(0).location = Location::in(y.id);
      r.changed = true;
      break;
    }
    case Verb::Drop: {
      if (!carried(obj(0))) break;
      target(0).location = Location::room(s.player_room);
      r.changed = true;
      break;
    }
    case Verb::Lock: {
      const Object& x = obj(0);
      const Object& k = obj(1);
      if (!reachable(s, x) || !x.lockable || x.locked || x.open) break;
      if (!carried(k) || k.kind != ObjectKind::Key || x.key_id != k.id) break;
      target(0).locked = true;
      r.changed = true;
      break;
    }
    case Verb::Unlock: {
      const Object& x = obj(0);
      const Object& k = obj(1);
      if (!reachable(s, x) || !x.locked) break;
      if (!carried(k) || k.kind != ObjectKind::Key || x.key_id != k.id) break;
      target(0).locked = false;
      r.changed = true;
      break;
    }
    case Verb::Eat: {
      const Object& x = obj(0);
      if (x.kind != ObjectKind::Food || !carried(x)) break;
      target(0).location = Location::nowhere();
      r.changed = true;
      break;
    }
  }
  if (!r.changed) r.state = s;
  return r;
}

namespace {

void sort_by_rendering(const GameState& s, std::vector<Command>& commands) {
  std::vector<std::pair<std::string, Command>> keyed;
  keyed.reserve(commands.size());
  for (auto& c : commands) keyed.emplace_back(render(s, c), std::move(c));
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  commands.clear();
  for (auto& [k, c] : keyed) commands.push_back(std::move(c));
}

}  // namespace

std::vector<Command> admissible_commands(const GameState& s) {
  std::vector<Command> out;
  const std::vector<int> inv = s.inventory();

  for (const auto& e : s.current_room().exits) {
    if (e.door < 0 || s.object(e.door).open) out.push_back(Command::go(e.direction));
  }

  auto lock_commands = [&](const Object& x) {
    if (!x.openable) return;
    if (!x.open && !x.locked) out.push_back(Command::with(Verb::Open, {x.id}));
    if (x.open) out.push_back(Command::with(Verb::Close, {x.id}));
    if (!x.lockable) return;
    for (int k : inv) {
      if (x.key_id != k) continue;
      if (x.locked) out.push_back(Command::with(Verb::Unlock, {x.id, k}));
      if (!x.locked && !x.open) out.push_back(Command::with(Verb::Lock, {x.id, k}));
    }
  };

  for (const auto& e : s.current_room().exits) {
    if (e.door >= 0) lock_commands(s.object(e.door));
  }

  for (const auto& o : s.objects) {
    if (!on_floor(s, o)) continue;
    switch (o.kind) {
      case ObjectKind::Container:
        lock_commands(o);
        if (o.open) {
          for (int item : held_by(s, Location::Kind::In, o.id)) {
            out.push_back(Command::with(Verb::TakeFrom, {item, o.id}));
          }
          for (int x : inv) out.push_back(Command::with(Verb::InsertInto, {x, o.id}));
        }
        break;
      case ObjectKind::Supporter:
        for (int item : held_by(s, Location::Kind::On, o.id)) {
          out.push_back(Command::with(Verb::TakeFrom, {item, o.id}));
        }
        for (int x : inv) out.push_back(Command::with(Verb::PutOn, {x, o.id}));
        break;
      default:
        if (is_carriable(o.kind)) out.push_back(Command::with(Verb::Take, {o.id}));
        break;
    }
  }

  for (int x : inv) {
    out.push_back(Command::with(Verb::Drop, {x}));
    if (s.object(x).kind == ObjectKind::Food) out.push_back(Command::with(Verb::Eat, {x}));
  }

  sort_by_rendering(s, out);
  return out;
}

std::vector<std::string> admissible_strings(const GameState& s) {
  std::vector<std::string> out;
  for (const auto& c : admissible_commands(s)) out.push_back(render(s, c));
  return out;
}

std::vector<Command> grammar_universe(const GameState& s) {
  std::vector<int> ids;
  for (const auto& o : s.objects) {
    if (present(s, o)) ids.push_back(o.id);
  }
  std::vector<Command> out;
  for (Direction d : kDirections) out.push_back(Command::go(d));
  for (Verb v : kVerbs) {
    if (object_arity(v) == 1) {
      for (int a : ids) out.push_back(Command::with(v, {a}));
    } else if (object_arity(v) == 2) {
      for (int a : ids) {
        for (int b : ids) {
          if (a != b) out.push_back(Command::with(v, {a, b}));
        }
      }
    }
  }
  return out;
}

std::vector<std::string> brute_force_admissible(const GameState& s) {
  std::vector<std::string> out;
  for (const auto& c : grammar_universe(s)) {
    if (apply(s, c).changed) out.push_back(render(s, c));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string Entity::name() const { return text::join(tokens); }

namespace {

Entity object_entity(const Object& o) { return {o.name, o.id, std::nullopt}; }

Entity direction_entity(Direction d) { return {{std::string(to_string(d))}, std::nullopt, d}; }

}  // namespace

std::vector<Entity> enumerate_entities(const GameState& s) {
  std::vector<Entity> out;
  for (const auto& o : s.objects) {
    if (!on_floor(s, o)) continue;
    out.push_back(object_entity(o));
    if (o.kind == ObjectKind::Supporter) {
      for (int item : held_by(s, Location::Kind::On, o.id)) out.push_back(object_entity(s.object(item)));
    } else if (o.kind == ObjectKind::Container && o.open) {
      for (int item : held_by(s, Location::Kind::In, o.id)) out.push_back(object_entity(s.object(item)));
    }
  }
  for (const auto& e : s.current_room().exits) {
    if (e.door >= 0) out.push_back(object_entity(s.object(e.door)));
    out.push_back(direction_entity(e.direction));
  }
  for (int x : s.inventory()) out.push_back(object_entity(s.object(x)));
  return out;
}

Entity primary_entity(const GameState& s, const Command& c) {
  check_grammar(s, c);
  if (c.verb == Verb::Go) return direction_entity(*c.direction);
  return object_entity(s.object(c.objects.front()));
}

std::string render_context(const GameState& s) {
  const Room& room = s.current_room();
  std::string out = "-= " + room.name + " =- you are in the " + room.name + " .";
  for (const auto& o : s.objects) {
    if (!on_floor(s, o)) continue;
    const std::string name = o.display_name();
    switch (o.kind) {
      case ObjectKind::Container: {
        const std::string_view status = status_word(o);
        out += std::string(" you see ") + (status == "open" ? "an " : "a ") + std::string(status) + " " + name + " .";
        if (o.open) {
          const auto items = held_by(s, Location::Kind::In, o.id);
          out += items.empty() ? " the " + name + " is empty ." : " the " + name + " contains " + list_phrase(s, items) + " .";
        }
        break;
      }
      case ObjectKind::Supporter: {
        out += " you see a " + name + " .";
        const auto items = held_by(s, Location::Kind::On, o.id);
        out += items.empty() ? " the " + name + " has nothing on it ."
                             : " on the " + name + " you see " + list_phrase(s, items) + " .";
        break;
      }
      default:
        out += " there is a " + name + " on the floor .";
        break;
    }
  }
  for (const auto& e : room.exits) {
    const std::string dir(to_string(e.direction));
    if (e.door >= 0) {
      const Object& door = s.object(e.door);
      const std::string_view status = status_word(door);
      out += std::string(" there is ") + (status == "open" ? "an " : "a ") + std::string(status) + " " +
             door.display_name() + " leading " + dir + " .";
    } else {
      out += " there is an exit to the " + dir + " .";
    }
  }
  const auto inv = s.inventory();
  out += inv.empty() ? " you are carrying nothing ." : " you are carrying " + list_phrase(s, inv) + " .";
  return out;
}

WorldConfig WorldConfig::defaults() {
  WorldConfig c;
  c.adjectives = {"red",    "blue",   "green",  "yellow", "purple", "golden", "silver", "rusty",  "wooden", "iron",
                  "copper", "brass",  "plain",  "fancy",  "small",  "large",  "old",    "new",    "dusty",  "shiny",
                  "striped", "dotted", "heavy", "tiny",   "grey",   "white",  "black",  "orange", "pink",   "crimson",
                  "stone",  "glass",  "ornate", "battered", "modern", "antique", "cheap", "sturdy", "dented", "gleaming"};
  c.container_nouns = {"box", "chest", "crate", "cabinet", "locker", "trunk", "safe", "basket", "coffer", "casket",
                       "bin", "carton"};
  c.supporter_nouns = {"table", "workbench", "shelf", "counter", "desk", "stand", "bench", "pedestal", "rack",
                       "dresser", "sideboard", "stool"};
  c.portable_nouns = {"bug",  "coin",  "book",   "lamp",   "hat",    "shoe",  "glove", "map",
                      "pen",  "cup",   "ring",   "sock",   "scarf",  "bottle", "candle", "brush"};
  c.food_nouns = {"apple", "carrot", "bread", "cheese", "pie", "cookie", "banana", "onion", "potato", "sandwich",
                  "muffin", "pear"};
  c.key_nouns = {"key", "keycard", "passkey"};
  c.door_nouns = {"door", "gate", "hatch", "portal"};
  c.room_names = {"attic",   "kitchen", "cellar", "bedroom",  "bathroom", "pantry",   "study",
                  "garage",  "library", "hallway", "parlor",  "office",   "chapel",   "workshop",
                  "basement", "lounge", "nursery", "scullery", "armory",  "vault"};
  return c;
}

void validate(const WorldConfig& c) {
  if (c.rooms_min < 1 || c.rooms_min > c.rooms_max) throw ConfigError("world: room count range is empty or below 1");
  if (c.objects_min < 0 || c.objects_min > c.objects_max) throw ConfigError("world: object count range is empty");
  for (double p : {c.door_prob, c.door_lock_prob, c.container_open_prob, c.container_lock_prob, c.adjective_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("world: probabilities must lie in [0, 1]");
  }
  if (c.walkthrough_length < 1) throw ConfigError("world: walkthrough length must be at least 1");
  if (static_cast<int>(c.room_names.size()) < c.rooms_max) throw ConfigError("world: not enough room names");
  if (c.objects_max > 0 && (c.container_nouns.empty() || c.supporter_nouns.empty() || c.portable_nouns.empty() ||
                            c.food_nouns.empty())) {
    throw ConfigError("world: object noun pools must be nonempty");
  }
  if (c.key_nouns.empty() || c.door_nouns.empty()) throw ConfigError("world: key and door noun pools must be nonempty");
}

namespace {

class WorldBuilder {
 public:
  WorldBuilder(const WorldConfig& config) : config_(config), rng_(config.seed) {}

  GameState build() {
    const int n_rooms = static_cast<int>(rng_.range(config_.rooms_min, config_.rooms_max));
    std::vector<std::string> room_names = config_.room_names;
    rng_.shuffle(std::span<std::string>(room_names));
    for (int r = 0; r < n_rooms; ++r) state_.rooms.push_back({r, room_names[static_cast<std::size_t>(r)], {}});
    layout(n_rooms);
    for (int r = 0; r < n_rooms; ++r) furnish(r);
    place_keys();
    state_.player_room = 0;
    check_invariants(state_);
    return std::move(state_);
  }

 private:
  void layout(int n_rooms) {
    std::map<std::pair<int, int>, int> cells{{{0, 0}, 0}};
    std::vector<std::pair<int, int>> pos{{0, 0}};
    for (int r = 1; r < n_rooms; ++r) {
      for (;;) {
        const int from = static_cast<int>(rng_.below(static_cast<std::uint64_t>(r)));
        const Direction d = kDirections[rng_.below(4)];
        auto [x, y] = pos[static_cast<std::size_t>(from)];
        switch (d) {
          case Direction::North: ++y; break;
          case Direction::South: --y; break;
          case Direction::East: ++x; break;
          case Direction::West: --x; break;
        }
        if (cells.count({x, y}) != 0) continue;
        cells[{x, y}] = r;
        pos.emplace_back(x, y);
        int door = -1;
        if (rng_.bernoulli(config_.door_prob)) door = make_door();
        state_.rooms[static_cast<std::size_t>(from)].exits.push_back({d, r, door});
        state_.rooms[static_cast<std::size_t>(r)].exits.push_back({opposite(d), from, door});
        break;
      }
    }
  }

  int make_door() {
    Object& door = new_object(ObjectKind::Door, config_.door_nouns, std::nullopt);
    door.location = Location::doorway();
    door.openable = true;
    door.lockable = rng_.bernoulli(config_.door_lock_prob);
    door.locked = door.lockable && rng_.bernoulli(0.7);
    door.open = !door.locked && rng_.bernoulli(0.5);
    return door.id;
  }

  void furnish(int room) {
    const int count = static_cast<int>(rng_.range(config_.objects_min, config_.objects_max));
    std::vector<ObjectKind> kinds;
    for (int i = 0; i < count; ++i) {
      const double u = rng_.uniform();
      kinds.push_back(u < 0.3 ? ObjectKind::Container
                              : u < 0.55 ? ObjectKind::Supporter : u < 0.8 ? ObjectKind::Portable : ObjectKind::Food);
    }
    std::stable_partition(kinds.begin(), kinds.end(), [](ObjectKind k) { return !is_carriable(k); });
    std::vector<int> holders;
    for (ObjectKind kind : kinds) {
      switch (kind) {
        case ObjectKind::Container: {
          Object& c = new_object(kind, config_.container_nouns, std::nullopt);
          c.location = Location::room(room);
          c.openable = true;
          c.lockable = rng_.bernoulli(config_.container_lock_prob);
          c.locked = c.lockable && rng_.bernoulli(0.6);
          c.open = !c.locked && rng_.bernoulli(config_.container_open_prob);
          holders.push_back(c.id);
          break;
        }
        case ObjectKind::Supporter: {
          Object& s = new_object(kind, config_.supporter_nouns, std::nullopt);
          s.location = Location::room(room);
          holders.push_back(s.id);
          break;
        }
        default: {
          const auto& pool = kind == ObjectKind::Food ? config_.food_nouns : config_.portable_nouns;
          Object& item = new_object(kind, pool, std::nullopt);
          item.location = Location::room(room);
          if (!holders.empty() && rng_.bernoulli(0.6)) {
            const int h = holders[rng_.below(holders.size())];
            item.location = holder_location(h);
          }
          break;
        }
      }
    }
  }

  Location holder_location(int holder) const {
    const Object& h = state_.objects[static_cast<std::size_t>(holder)];
    return h.kind == ObjectKind::Container ? Location::in(holder) : Location::on(holder);
  }

  // Rooms reachable from the start without passing a locked door.
  std::vector<int> open_region() const {
    std::vector<int> order{0};
    std::set<int> seen{0};
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (const auto& e : state_.rooms[static_cast<std::size_t>(order[i])].exits) {
        if (e.door >= 0 && state_.objects[static_cast<std::size_t>(e.door)].locked) continue;
        if (seen.insert(e.to_room).second) order.push_back(e.to_room);
      }
    }
    return order;
  }

  void place_keys() {
    std::vector<int> locks;
    for (const auto& o : state_.objects) {
      if (o.lockable) locks.push_back(o.id);
    }
    const auto region = open_region();
    std::vector<Location> spots;
    for (int r : region) {
      spots.push_back(Location::room(r));
      for (const auto& o : state_.objects) {
        if (o.location != Location::room(r)) continue;
        if (o.kind == ObjectKind::Supporter || (o.kind == ObjectKind::Container && !o.locked)) {
          spots.push_back(holder_location(o.id));
        }
      }
    }
    for (int lock : locks) {
      std::optional<std::string> adjective;
      const auto& lock_name = state_.objects[static_cast<std::size_t>(lock)].name;
      if (lock_name.size() > 1) adjective = lock_name.front();
      Object& key = new_object(ObjectKind::Key, config_.key_nouns, adjective);
      key.location = spots[rng_.below(spots.size())];
      state_.objects[static_cast<std::size_t>(lock)].key_id = key.id;
    }
  }

  bool conflicts(const std::vector<std::string>& name) const {
    for (const auto& o : state_.objects) {
      if (contains_subsequence(o.name, name) || contains_subsequence(name, o.name)) return true;
    }
    return false;
  }

  Object& new_object(ObjectKind kind, const std::vector<std::string>& nouns, std::optional<std::string> adjective) {
    for (int attempt = 0; attempt < 400; ++attempt) {
      std::vector<std::string> name;
      if (adjective && attempt < 40) {
        name.push_back(*adjective);
      } else if (!config_.adjectives.empty() && rng_.bernoulli(config_.adjective_prob)) {
        name.push_back(config_.adjectives[rng_.below(config_.adjectives.size())]);
      }
      name.push_back(nouns[rng_.below(nouns.size())]);
      if (conflicts(name)) continue;
      Object& o = state_.objects.emplace_back();
      o.id = static_cast<int>(state_.objects.size()) - 1;
      o.kind = kind;
      o.name = std::move(name);
      return o;
    }
    throw ConfigError("world: lexicon too small to name every object uniquely");
  }

  const WorldConfig& config_;
  Rng rng_;
  GameState state_;
};

}  // namespace

GameState generate_world(const WorldConfig& config) {
  validate(config);
  return WorldBuilder(config).build();
}

std::vector<GameState> walkthrough(const GameState& start, int length, Rng& rng) {
  if (length < 1) throw ContractError("walkthrough: length must be at least 1");
  std::vector<GameState> out{start};
  std::unordered_set<std::uint64_t> seen{start.hash()};
  GameState current = start;
  for (int step = 1; step < length; ++step) {
    const auto commands = admissible_commands(current);
    if (commands.empty()) break;
    current = apply(current, commands[rng.below(commands.size())]).state;
    if (seen.insert(current.hash()).second) out.push_back(current);
  }
  return out;
}

int find_span(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return -1;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

std::vector<text::DataPoint> emit_dataset(const std::vector<GameState>& states, text::Task task, int game_id) {
  std::vector<text::DataPoint> out;
  for (std::size_t si = 0; si < states.size(); ++si) {
    const GameState& s = states[si];
    const auto context = text::tokenize(render_context(s));
    const auto entities = enumerate_entities(s);
    std::vector<text::EntitySpan> spans;
    for (const auto& e : entities) {
      const int start = find_span(context, e.tokens);
      if (start < 0) throw ConsistencyError("entity '" + e.name() + "' missing from the rendered context");
      spans.push_back({e.name(), start, start + static_cast<int>(e.tokens.size()) - 1});
    }
    const auto commands = admissible_commands(s);
    char id[48];
    std::snprintf(id, sizeof(id), "g%05d_s%03zu", game_id, si);

    if (task == text::Task::ACG) {
      text::DataPoint p;
      p.game_id = game_id;
      p.state_id = id;
      p.context = context;
      p.entities = spans;
      for (const auto& c : commands) p.commands.push_back(render(s, c));
      p.task = task;
      out.push_back(std::move(p));
      continue;
    }
    for (std::size_t ei = 0; ei < entities.size(); ++ei) {
      text::DataPoint p;
      p.game_id = game_id;
      p.state_id = id;
      p.context = context;
      p.entities = {spans[ei]};
      for (const auto& c : commands) {
        if (primary_entity(s, c) == entities[ei]) p.commands.push_back(render(s, c));
      }
      p.task = task;
      out.push_back(std::move(p));
    }
  }
  return out;
}

void validate(const SplitRatios& r) {
  if (r.train < 0.0 || r.valid < 0.0 || r.test < 0.0) throw ConfigError("split ratios must be nonnegative");
  if (std::abs(r.train + r.valid + r.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Corpus generate_corpus(const WorldConfig& config, int games, const SplitRatios& ratios) {
  validate(config);
  validate(ratios);
  if (games < 0) throw ConfigError("number of games must be nonnegative");
  std::vector<int> order(static_cast<std::size_t>(games));
  for (int i = 0; i < games; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng(config.seed, 0x73706c6974ull);
  split_rng.shuffle(std::span<int>(order));
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * games));
  const auto n_valid = std::min(order.size() - std::min(order.size(), n_train),
                                static_cast<std::size_t>(std::llround(ratios.valid * games)));
  Corpus c;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t split = k < n_train ? 0 : (k < n_train + n_valid ? 1 : 2);
    c.games[split].push_back(order[k]);
  }
  for (auto& g : c.games) std::sort(g.begin(), g.end());
  for (std::size_t split = 0; split < 3; ++split) {
    for (int game : c.games[split]) {
      WorldConfig wc = config;
      wc.seed = Rng(config.seed, 0x67616d6500000000ull + static_cast<std::uint64_t>(game)).next_u64();
      const GameState start = generate_world(wc);
      Rng walk(wc.seed, 0x77616c6bull);
      const auto states = walkthrough(start, config.walkthrough_length, walk);
      for (auto& p : emit_dataset(states, text::Task::ACG, game)) c.acg[split].push_back(std::move(p));
      for (auto& p : emit_dataset(states, text::Task::ACGE, game)) c.acge[split].push_back(std::move(p));
    }
  }
  return c;
}

}  // namespace acg::world
