#pragma once

#include <optional>
#include <string>
#include <vector>

#include "maaf/ppm.hpp"
#include "maaf/rng.hpp"

namespace maaf {

enum class Shape { Sphere, Cube, Cylinder };  // drawn as circle/square/triangle
enum class Size { Small, Large };

// Fig-style palette: red, yellow, green, cyan, blue, purple, brown, gray
extern const std::vector<std::string> kColorNames;
extern const std::vector<std::string> kShapeNames;     // sphere cube cylinder
extern const std::vector<std::string> kPositionWords;  // top-left ... bottom-right

std::string shape_name(Shape s);
std::string size_name(Size s);

struct SceneObject {
  Shape shape = Shape::Sphere;
  int color = 0;  // index into kColorNames
  Size size = Size::Large;
  int row = 0, col = 0;  // cell in the 3x3 grid
};

// 3x3 grid scene, at most one object per cell, 2..6 objects.
struct Scene {
  std::vector<SceneObject> objects;

  const SceneObject* at(int row, int col) const;
  // canonical serialization; equal scenes hash equal regardless of
  // object insertion order
  std::string canonical() const;
  std::uint64_t hash() const;
};

enum class Verb { Make, Remove, Add };

// selector: color+shape pair, or a position word (cell)
struct Selector {
  bool by_position = false;
  int color = 0;
  Shape shape = Shape::Sphere;
  int row = 0, col = 0;
};

struct ModCommand {
  Verb verb = Verb::Make;
  Selector selector;
  // make: target size; add: new object attributes
  Size make_size = Size::Small;
  Shape add_shape = Shape::Sphere;
  int add_color = 0;
  Size add_size = Size::Large;
};

Scene gen_scene(Rng& rng);
bool command_applicable(const Scene& s, const ModCommand& c);
Scene apply_command(const Scene& s, const ModCommand& c);
// random command applicable to s
ModCommand gen_command(const Scene& s, Rng& rng);
std::string caption(const ModCommand& c);

// position word for a cell, e.g. (0,2) -> "top-right"
std::string position_word(int row, int col);

// px must be a multiple of 48 (3 cells x 16). Flat dark background;
// large objects span 80% of their cell, small 40%. Deterministic.
ImageTensor render(const Scene& s, int px);

struct TripletRecord {
  std::string query;    // query image path
  std::string caption;  // modification text
  std::string target;   // target image path
  std::string category;
};

struct DatasetManifest {
  std::vector<TripletRecord> records;
  std::string root;  // directory containing the manifest
};

// Writes P6 images, a caption vocabulary file, and JSON-lines manifests
// (train.jsonl / test.jsonl) with disjoint train/test scene pools.
// Returns the training manifest.
DatasetManifest gen_dataset(std::size_t n_train, std::size_t n_test,
                            std::uint64_t seed, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& path);

}  // namespace maaf
