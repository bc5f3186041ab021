#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_set>

#include "maaf/css.hpp"
#include "maaf/text_encoder.hpp"

using namespace maaf;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> file_bytes(const std::string& p) {
  return read_file_bytes(p);
}

Scene two_object_scene() {
  Scene s;
  s.objects.push_back({Shape::Cube, 0, Size::Large, 0, 0});      // red cube
  s.objects.push_back({Shape::Sphere, 4, Size::Small, 2, 2});    // blue sphere
  return s;
}

}  // namespace

TEST_CASE("scene hash ignores object insertion order") {
  Scene a = two_object_scene();
  Scene b;
  b.objects.push_back(a.objects[1]);
  b.objects.push_back(a.objects[0]);
  CHECK(a.canonical() == b.canonical());
  CHECK(a.hash() == b.hash());
  Scene c = a;
  c.objects[0].color = 3;
  CHECK(c.hash() != a.hash());
}

TEST_CASE("generated scenes have 2..6 objects in distinct cells") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Scene s = gen_scene(rng);
    CHECK(s.objects.size() >= 2);
    CHECK(s.objects.size() <= 6);
    std::set<std::pair<int, int>> cells;
    for (const auto& o : s.objects) {
      CHECK(o.row >= 0);
      CHECK(o.row < 3);
      CHECK(o.col >= 0);
      CHECK(o.col < 3);
      CHECK(cells.insert({o.row, o.col}).second);
    }
  }
}

TEST_CASE("modification commands change scenes as their captions say") {
  Scene s = two_object_scene();

  ModCommand make;
  make.verb = Verb::Make;
  make.selector.color = 0;
  make.selector.shape = Shape::Cube;
  make.make_size = Size::Small;
  CHECK(caption(make) == "make red cube small");
  CHECK(command_applicable(s, make));
  Scene after = apply_command(s, make);
  CHECK(after.at(0, 0)->size == Size::Small);
  // already small: no longer applicable
  CHECK_FALSE(command_applicable(after, make));
  CHECK_THROWS_AS(apply_command(after, make), Error);

  ModCommand rm;
  rm.verb = Verb::Remove;
  rm.selector.by_position = true;
  rm.selector.row = 2;
  rm.selector.col = 2;
  CHECK(caption(rm) == "remove bottom-right");
  Scene removed = apply_command(s, rm);
  CHECK(removed.objects.size() == 1);
  CHECK(removed.at(2, 2) == nullptr);

  ModCommand add;
  add.verb = Verb::Add;
  add.selector.by_position = true;
  add.selector.row = 1;
  add.selector.col = 1;
  add.add_color = 2;
  add.add_shape = Shape::Cylinder;
  add.add_size = Size::Large;
  CHECK(caption(add) == "add green cylinder to middle-center");
  Scene added = apply_command(s, add);
  CHECK(added.objects.size() == 3);
  CHECK(added.at(1, 1)->shape == Shape::Cylinder);
  // occupied cell: not applicable
  add.selector.row = 0;
  add.selector.col = 0;
  CHECK_FALSE(command_applicable(s, add));
}

TEST_CASE("generated commands are always applicable") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    Scene s = gen_scene(rng);
    ModCommand c = gen_command(s, rng);
    CHECK(command_applicable(s, c));
    Scene t = apply_command(s, c);
    CHECK(t.hash() != s.hash());
  }
}

TEST_CASE("position words cover the grid row-major") {
  CHECK(position_word(0, 0) == "top-left");
  CHECK(position_word(0, 2) == "top-right");
  CHECK(position_word(1, 1) == "middle-center");
  CHECK(position_word(2, 0) == "bottom-left");
  CHECK(kPositionWords.size() == 9);
}

TEST_CASE("rendering is deterministic and rejects bad sizes") {
  Scene s = two_object_scene();
  ImageTensor a = render(s, 48);
  ImageTensor b = render(s, 48);
  CHECK(a.values == b.values);
  CHECK_THROWS_AS(render(s, 47), Error);
  CHECK_THROWS_AS(render(s, 0), Error);
  CHECK_NOTHROW(render(s, 96));
}

TEST_CASE("rendered objects land in their cells with their colors") {
  Scene s = two_object_scene();
  ImageTensor img = render(s, 48);
  // red cube centered in cell (0,0): pixel (8,8) is red
  CHECK(img.at(0, 8, 8) > real(0.5));
  CHECK(img.at(1, 8, 8) < real(0.3));
  // blue sphere centered in cell (2,2): pixel (40,40) is blue
  CHECK(img.at(2, 40, 40) > real(0.5));
  CHECK(img.at(0, 40, 40) < real(0.3));
  // empty cell (1,1) stays background
  CHECK(img.at(0, 24, 24) == doctest::Approx(0.08));
  // small objects cover about (0.4)^2 of a large one's area
  Scene small = s;
  small.objects[0].size = Size::Small;
  ImageTensor simg = render(small, 48);
  auto coverage = [](const ImageTensor& im, int y0, int y1, int x0, int x1) {
    int n = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        if (im.at(0, y, x) > real(0.5)) ++n;
    return n;
  };
  const int large_px = coverage(img, 0, 16, 0, 16);
  const int small_px = coverage(simg, 0, 16, 0, 16);
  CHECK(small_px * 3 < large_px);
}

TEST_CASE("dataset generation writes a consistent, disjoint corpus") {
  const fs::path dir = fs::temp_directory_path() / "maaf_css_test";
  fs::remove_all(dir);
  DatasetManifest train = gen_dataset(30, 10, 7, dir.string());
  CHECK(train.records.size() == 30);

  DatasetManifest train2 = load_manifest((dir / "train.jsonl").string());
  REQUIRE(train2.records.size() == 30);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(train2.records[i].query == train.records[i].query);
    CHECK(train2.records[i].caption == train.records[i].caption);
  }
  DatasetManifest test = load_manifest((dir / "test.jsonl").string());
  CHECK(test.records.size() == 10);
  for (const auto& r : test.records) {
    CHECK(fs::exists(dir / r.query));
    CHECK(fs::exists(dir / r.target));
    CHECK((r.category == "make" || r.category == "remove" ||
           r.category == "add"));
  }

  // vocabulary covers every training caption token
  Vocabulary vocab = Vocabulary::load((dir / "vocab.txt").string());
  for (const auto& r : train.records)
    for (const auto& w : tokenize_words(r.caption))
      CHECK(vocab.index_of(w) != 0);

  // no test image byte-identical to any train image (scene disjointness)
  std::unordered_set<std::string> train_imgs;
  for (const auto& r : train.records) {
    auto q = file_bytes((dir / r.query).string());
    auto t = file_bytes((dir / r.target).string());
    train_imgs.insert(std::string(q.begin(), q.end()));
    train_imgs.insert(std::string(t.begin(), t.end()));
  }
  for (const auto& r : test.records) {
    auto q = file_bytes((dir / r.query).string());
    auto t = file_bytes((dir / r.target).string());
    CHECK(train_imgs.count(std::string(q.begin(), q.end())) == 0);
    CHECK(train_imgs.count(std::string(t.begin(), t.end())) == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset generation is reproducible from the seed") {
  const fs::path a = fs::temp_directory_path() / "maaf_css_seed_a";
  const fs::path b = fs::temp_directory_path() / "maaf_css_seed_b";
  const fs::path c = fs::temp_directory_path() / "maaf_css_seed_c";
  for (const auto& d : {a, b, c}) fs::remove_all(d);
  gen_dataset(8, 3, 42, a.string());
  gen_dataset(8, 3, 42, b.string());
  gen_dataset(8, 3, 43, c.string());
  CHECK(file_bytes((a / "train.jsonl").string()) ==
        file_bytes((b / "train.jsonl").string()));
  CHECK(file_bytes((a / "images/train_q_00000.ppm").string()) ==
        file_bytes((b / "images/train_q_00000.ppm").string()));
  CHECK(file_bytes((a / "train.jsonl").string()) !=
        file_bytes((c / "train.jsonl").string()));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("manifest loading reports broken lines and missing files") {
  const fs::path dir = fs::temp_directory_path() / "maaf_css_badmanifest";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << "{not json}\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "bad.jsonl").string()), Error);
  {
    std::ofstream out(dir / "missing.jsonl");
    out << R"({"query":"images/nope.ppm","caption":"x","target":"images/nope2.ppm"})"
        << "\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "missing.jsonl").string()), Error);
  CHECK_THROWS_AS(load_manifest((dir / "absent.jsonl").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("binary image files round-trip through the codec") {
  Scene s = two_object_scene();
  ImageTensor img = render(s, 48);
  const fs::path p = fs::temp_directory_path() / "maaf_roundtrip.ppm";
  write_ppm(img, p.string());
  ImageTensor back = read_ppm(p.string());
  REQUIRE(back.height == 48);
  REQUIRE(back.width == 48);
  for (std::size_t i = 0; i < img.values.size(); ++i)
    CHECK(std::abs(back.values[i] - img.values[i]) <= real(0.5 / 255));
  // writing the read-back image reproduces identical bytes
  const fs::path p2 = fs::temp_directory_path() / "maaf_roundtrip2.ppm";
  write_ppm(back, p2.string());
  CHECK(file_bytes(p.string()) == file_bytes(p2.string()));
  fs::remove(p);
  fs::remove(p2);
}
