#pragma once

// Deterministic mini text-adventure engine: world generation, templated
// context rendering, command semantics and the admissible-command oracle.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acg/rng.hpp"
#include "acg/textcorpus.hpp"

namespace acg::world {

enum class Direction : std::uint8_t { North, South, East, West };

inline constexpr std::array<Direction, 4> kDirections = {Direction::North, Direction::South, Direction::East,
                                                         Direction::West};

std::string_view to_string(Direction d);
Direction opposite(Direction d);

enum class ObjectKind : std::uint8_t { Container, Supporter, Portable, Food, Key, Door };

std::string_view to_string(ObjectKind k);

/// Portable, food and key objects can be carried.
bool is_carriable(ObjectKind k);

struct Location {
  enum class Kind : std::uint8_t { Room, In, On, Inventory, Doorway, Nowhere };

  Kind kind = Kind::Nowhere;
  int id = -1;  // room id for Room, holder object id for In/On

  bool operator==(const Location&) const = default;

  static Location room(int r) { return {Kind::Room, r}; }
  static Location in(int c) { return {Kind::In, c}; }
  static Location on(int s) { return {Kind::On, s}; }
  static Location inventory() { return {Kind::Inventory, -1}; }
  static Location doorway() { return {Kind::Doorway, -1}; }
  static Location nowhere() { return {Kind::Nowhere, -1}; }
};

struct Object {
  int id = 0;
  std::vector<std::string> name;
  ObjectKind kind = ObjectKind::Portable;
  bool openable = false;
  bool open = false;
  bool lockable = false;
  bool locked = false;
  int key_id = -1;  // for lockable objects: the key that fits
  Location location;

  std::string display_name() const;
  bool operator==(const Object&) const = default;
};

struct Exit {
  Direction direction = Direction::North;
  int to_room = 0;
  int door = -1;

  bool operator==(const Exit&) const = default;
};

struct Room {
  int id = 0;
  std::string name;
  std::vector<Exit> exits;

  bool operator==(const Room&) const = default;
};

struct GameState {
  std::vector<Room> rooms;
  std::vector<Object> objects;
  int player_room = 0;

  bool operator==(const GameState&) const = default;

  const Object& object(int id) const;
  const Room& current_room() const { return rooms.at(static_cast<std::size_t>(player_room)); }
  const Exit* exit(Direction d) const;
  /// Inventory object ids in ascending order.
  std::vector<int> inventory() const;
  /// Hash of the mutable part of the state (player room and object status).
  std::uint64_t hash() const;
};

/// Throws ConsistencyError if containment is cyclic, lock/open flags are
/// inconsistent, names repeat, or exits reference missing rooms or doors.
void check_invariants(const GameState& state);

enum class Verb : std::uint8_t { Go, Open, Close, Take, TakeFrom, PutOn, InsertInto, Drop, Lock, Unlock, Eat };

inline constexpr std::array<Verb, 11> kVerbs = {Verb::Go,   Verb::Open,       Verb::Close, Verb::Take,
                                                Verb::TakeFrom, Verb::PutOn, Verb::InsertInto, Verb::Drop,
                                                Verb::Lock, Verb::Unlock, Verb::Eat};

/// Number of object slots a verb takes (go takes a direction instead).
int object_arity(Verb v);

struct Command {
  Verb verb = Verb::Go;
  std::vector<int> objects;
  std::optional<Direction> direction;

  bool operator==(const Command&) const = default;

  static Command go(Direction d) { return {Verb::Go, {}, d}; }
  static Command with(Verb v, std::vector<int> objects) { return {v, std::move(objects), std::nullopt}; }
};

/// Throws GrammarError for wrong arity, misplaced direction, unknown or
/// repeated object ids.
void check_grammar(const GameState& state, const Command& command);

/// Canonical lowercase rendering, e.g. "take bug from workbench".
std::string render(const GameState& state, const Command& command);

struct ApplyResult {
  GameState state;
  bool changed = false;
};

/// Pure transition. Inapplicable commands return the input state with
/// changed == false; structurally malformed ones throw GrammarError.
ApplyResult apply(const GameState& state, const Command& command);

/// Directly enumerated admissible commands, ordered by rendered string.
std::vector<Command> admissible_commands(const GameState& state);
std::vector<std::string> admissible_strings(const GameState& state);

/// Every well-formed command over the four directions and the objects in
/// the player's room (hidden ones included), adjacent doors and inventory.
std::vector<Command> grammar_universe(const GameState& state);

/// grammar_universe filtered through apply(); independent of
/// admissible_commands and ordered the same way.
std::vector<std::string> brute_force_admissible(const GameState& state);

struct Entity {
  std::vector<std::string> tokens;
  std::optional<int> object;
  std::optional<Direction> direction;

  std::string name() const;
  bool operator==(const Entity&) const = default;
};

/// Visible objects (doors included), inventory items and exit directions,
/// in the order they are mentioned by render_context.
std::vector<Entity> enumerate_entities(const GameState& state);

/// The entity a command is grouped under: its direct object, or the
/// direction for go.
Entity primary_entity(const GameState& state, const Command& command);

std::string render_context(const GameState& state);

struct WorldConfig {
  std::uint64_t seed = 1;
  int rooms_min = 1;
  int rooms_max = 3;
  // Per room, not counting doors and keys.
  int objects_min = 1;
  int objects_max = 3;
  double door_prob = 0.4;
  double door_lock_prob = 0.3;
  double container_open_prob = 0.3;
  double container_lock_prob = 0.25;
  double adjective_prob = 0.85;
  int walkthrough_length = 10;

  std::vector<std::string> adjectives;
  std::vector<std::string> container_nouns;
  std::vector<std::string> supporter_nouns;
  std::vector<std::string> portable_nouns;
  std::vector<std::string> food_nouns;
  std::vector<std::string> key_nouns;
  std::vector<std::string> door_nouns;
  std::vector<std::string> room_names;

  /// Configuration with the built-in lexicon.
  static WorldConfig defaults();
};

/// Throws ConfigError for empty ranges, probabilities outside [0, 1] or a
/// lexicon too small for the requested sizes.
void validate(const WorldConfig& config);

GameState generate_world(const WorldConfig& config);

/// Random walk of up to `length` states (the first is `start`), choosing
/// uniformly among admissible commands; revisited states are skipped and
/// the walk stops early at a state without admissible commands.
std::vector<GameState> walkthrough(const GameState& start, int length, Rng& rng);

/// ACG: one point per state. ACGE: one point per (state, entity) holding the
/// commands whose primary entity it is; inert entities keep an empty list.
std::vector<text::DataPoint> emit_dataset(const std::vector<GameState>& states, text::Task task, int game_id);

/// First index where `needle` occurs in `haystack`, or -1.
int find_span(const std::vector<std::string>& haystack, const std::vector<std::string>& needle);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

/// ConfigError unless all ratios are nonnegative and sum to 1.
void validate(const SplitRatios& ratios);

enum class Split { Train = 0, Valid = 1, Test = 2 };
std::string_view to_string(Split s);

struct Corpus {
  // Indexed by Split.
  std::array<std::vector<text::DataPoint>, 3> acg;
  std::array<std::vector<text::DataPoint>, 3> acge;
  std::array<std::vector<int>, 3> games;
};

/// Game i uses world seed (config.seed, i) and its own walkthrough stream;
/// whole games are assigned to splits after a seeded shuffle.
Corpus generate_corpus(const WorldConfig& config, int games, const SplitRatios& ratios);

}  // namespace acg::world
