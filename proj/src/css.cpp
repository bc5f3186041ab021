#include "maaf/css.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "maaf/text_encoder.hpp"

namespace maaf {

namespace fs = std::filesystem;

const std::vector<std::string> kColorNames = {
    "red", "yellow", "green", "cyan", "blue", "purple", "brown", "gray"};
const std::vector<std::string> kShapeNames = {"sphere", "cube", "cylinder"};
const std::vector<std::string> kPositionWords = {
    "top-left",    "top-center",    "top-right",
    "middle-left", "middle-center", "middle-right",
    "bottom-left", "bottom-center", "bottom-right"};

namespace {

// sRGB-ish palette in [0,1], indexed like kColorNames
constexpr double kPalette[8][3] = {
    {0.80, 0.12, 0.12}, {0.86, 0.82, 0.16}, {0.16, 0.70, 0.24},
    {0.16, 0.78, 0.78}, {0.16, 0.24, 0.86}, {0.59, 0.16, 0.70},
    {0.55, 0.35, 0.16}, {0.51, 0.51, 0.51}};
constexpr double kBackground = 0.08;

}  // namespace

std::string shape_name(Shape s) {
  return kShapeNames[static_cast<int>(s)];
}

std::string size_name(Size s) { return s == Size::Small ? "small" : "large"; }

std::string position_word(int row, int col) {
  return kPositionWords[row * 3 + col];
}

const SceneObject* Scene::at(int row, int col) const {
  for (const auto& o : objects)
    if (o.row == row && o.col == col) return &o;
  return nullptr;
}

std::string Scene::canonical() const {
  std::vector<const SceneObject*> sorted;
  for (const auto& o : objects) sorted.push_back(&o);
  std::sort(sorted.begin(), sorted.end(),
            [](const SceneObject* a, const SceneObject* b) {
              return std::make_pair(a->row, a->col) <
                     std::make_pair(b->row, b->col);
            });
  std::ostringstream os;
  for (const auto* o : sorted) {
    os << o->row << o->col << static_cast<int>(o->shape) << o->color
       << static_cast<int>(o->size) << ";";
  }
  return os.str();
}

std::uint64_t Scene::hash() const {
  // FNV-1a over the canonical form
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : canonical()) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Scene gen_scene(Rng& rng) {
  Scene s;
  const int n = 2 + static_cast<int>(rng.below(5));  // 2..6 objects
  std::vector<int> cells(9);
  for (int i = 0; i < 9; ++i) cells[i] = i;
  // Fisher-Yates prefix for distinct cells
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(9 - i));
    std::swap(cells[i], cells[j]);
  }
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.row = cells[i] / 3;
    o.col = cells[i] % 3;
    o.shape = static_cast<Shape>(rng.below(3));
    o.color = static_cast<int>(rng.below(kColorNames.size()));
    o.size = rng.below(2) == 0 ? Size::Small : Size::Large;
    s.objects.push_back(o);
  }
  return s;
}

namespace {

bool selector_matches(const Selector& sel, const SceneObject& o) {
  if (sel.by_position) return o.row == sel.row && o.col == sel.col;
  return o.color == sel.color && o.shape == sel.shape;
}

}  // namespace

bool command_applicable(const Scene& s, const ModCommand& c) {
  switch (c.verb) {
    case Verb::Make: {
      // must actually change something
      for (const auto& o : s.objects)
        if (selector_matches(c.selector, o) && o.size != c.make_size)
          return true;
      return false;
    }
    case Verb::Remove:
      for (const auto& o : s.objects)
        if (selector_matches(c.selector, o)) return true;
      return false;
    case Verb::Add:
      return c.selector.by_position &&
             s.at(c.selector.row, c.selector.col) == nullptr &&
             s.objects.size() < 6;
  }
  return false;
}

Scene apply_command(const Scene& s, const ModCommand& c) {
  if (!command_applicable(s, c)) {
    throw Error("apply_command: command \"" + caption(c) +
                "\" not applicable to scene " + s.canonical());
  }
  Scene out = s;
  switch (c.verb) {
    case Verb::Make:
      for (auto& o : out.objects)
        if (selector_matches(c.selector, o)) o.size = c.make_size;
      break;
    case Verb::Remove:
      out.objects.erase(
          std::remove_if(out.objects.begin(), out.objects.end(),
                         [&](const SceneObject& o) {
                           return selector_matches(c.selector, o);
                         }),
          out.objects.end());
      break;
    case Verb::Add: {
      SceneObject o;
      o.row = c.selector.row;
      o.col = c.selector.col;
      o.shape = c.add_shape;
      o.color = c.add_color;
      o.size = c.add_size;
      out.objects.push_back(o);
      break;
    }
  }
  return out;
}

ModCommand gen_command(const Scene& s, Rng& rng) {
  for (int attempt = 0; attempt < 256; ++attempt) {
    ModCommand c;
    const int verb = static_cast<int>(rng.below(3));
    if (verb == 0) {
      const auto& o = s.objects[rng.below(s.objects.size())];
      c.verb = Verb::Make;
      c.selector.by_position = false;
      c.selector.color = o.color;
      c.selector.shape = o.shape;
      c.make_size = o.size == Size::Small ? Size::Large : Size::Small;
    } else if (verb == 1) {
      const auto& o = s.objects[rng.below(s.objects.size())];
      c.verb = Verb::Remove;
      if (rng.below(2) == 0) {
        c.selector.by_position = false;
        c.selector.color = o.color;
        c.selector.shape = o.shape;
      } else {
        c.selector.by_position = true;
        c.selector.row = o.row;
        c.selector.col = o.col;
      }
    } else {
      c.verb = Verb::Add;
      c.selector.by_position = true;
      c.selector.row = static_cast<int>(rng.below(3));
      c.selector.col = static_cast<int>(rng.below(3));
      c.add_shape = static_cast<Shape>(rng.below(3));
      c.add_color = static_cast<int>(rng.below(kColorNames.size()));
      c.add_size = rng.below(2) == 0 ? Size::Small : Size::Large;
    }
    if (command_applicable(s, c)) return c;
  }
  throw Error("gen_command: no applicable command found");
}

std::string caption(const ModCommand& c) {
  std::ostringstream os;
  switch (c.verb) {
    case Verb::Make:
      os << "make " << kColorNames[c.selector.color] << " "
         << shape_name(c.selector.shape) << " " << size_name(c.make_size);
      break;
    case Verb::Remove:
      if (c.selector.by_position)
        os << "remove " << position_word(c.selector.row, c.selector.col);
      else
        os << "remove " << kColorNames[c.selector.color] << " "
           << shape_name(c.selector.shape);
      break;
    case Verb::Add:
      os << "add " << kColorNames[c.add_color] << " "
         << shape_name(c.add_shape) << " to "
         << position_word(c.selector.row, c.selector.col);
      break;
  }
  return os.str();
}

ImageTensor render(const Scene& s, int px) {
  if (px <= 0 || px % 48 != 0) {
    throw Error("render: px must be a positive multiple of 48, got " +
                std::to_string(px));
  }
  ImageTensor img = image_zeros(px, px);
  for (auto& v : img.values) v = real(kBackground);
  const double cell = px / 3.0;
  for (const auto& o : s.objects) {
    const double cx = (o.col + 0.5) * cell;
    const double cy = (o.row + 0.5) * cell;
    const double extent = (o.size == Size::Large ? 0.8 : 0.4) * cell;
    const double half = extent / 2.0;
    const int y0 = std::max(0, static_cast<int>(cy - half));
    const int y1 = std::min(px - 1, static_cast<int>(cy + half));
    const int x0 = std::max(0, static_cast<int>(cx - half));
    const int x1 = std::min(px - 1, static_cast<int>(cx + half));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        bool inside = false;
        switch (o.shape) {
          case Shape::Sphere:
            inside = dx * dx + dy * dy <= half * half;
            break;
          case Shape::Cube:
            inside = std::abs(dx) <= half && std::abs(dy) <= half;
            break;
          case Shape::Cylinder: {
            // upward triangle
            const double t = (dy + half) / extent;  // 0 at apex row
            inside = t >= 0.0 && t <= 1.0 && std::abs(dx) <= half * t;
            break;
          }
        }
        if (inside)
          for (int ch = 0; ch < 3; ++ch)
            img.at(ch, y, x) = real(kPalette[o.color][ch]);
      }
    }
  }
  return img;
}

namespace {

void write_manifest(const std::string& path,
                    const std::vector<TripletRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("gen_dataset: cannot open " + path);
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["query"] = r.query;
    j["caption"] = r.caption;
    j["target"] = r.target;
    j["category"] = r.category;
    out << j.dump() << "\n";
  }
  if (!out) throw Error("gen_dataset: write failed for " + path);
}

std::string category_of(const ModCommand& c) {
  switch (c.verb) {
    case Verb::Make: return "make";
    case Verb::Remove: return "remove";
    case Verb::Add: return "add";
  }
  return "";
}

}  // namespace

DatasetManifest gen_dataset(std::size_t n_train, std::size_t n_test,
                            std::uint64_t seed, const std::string& out_dir) {
  const int px = 48;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) {
    throw Error("gen_dataset: cannot create " + out_dir + ": " + ec.message());
  }
  Rng rng(seed);

  // Each query scene carries several different commands, so a catalog
  // built from the targets holds sibling images that only the caption
  // can tell apart; image similarity alone cannot pick among them.
  constexpr std::size_t kCommandsPerScene = 8;

  std::unordered_set<std::uint64_t> train_pool;  // source + target hashes
  std::vector<TripletRecord> train, test;
  std::vector<std::string> train_captions;

  auto gen_group = [&](std::size_t want, Scene& src,
                       std::vector<ModCommand>& cmds,
                       std::vector<Scene>& tgts) {
    src = gen_scene(rng);
    std::unordered_set<std::string> caps;
    std::unordered_set<std::uint64_t> hashes;
    cmds.clear();
    tgts.clear();
    for (int attempts = 0; cmds.size() < want && attempts < 500; ++attempts) {
      ModCommand c = gen_command(src, rng);
      Scene t = apply_command(src, c);
      if (!caps.insert(caption(c)).second) continue;
      if (!hashes.insert(t.hash()).second) continue;
      cmds.push_back(c);
      tgts.push_back(t);
    }
  };

  auto img_path = [&](const std::string& split, char kind, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "images/%s_%c_%05zu.ppm", split.c_str(),
                  kind, i);
    return std::string(buf);
  };

  auto emit_group = [&](const std::string& split, std::size_t group,
                        std::size_t first_rec, const Scene& src,
                        const std::vector<ModCommand>& cmds,
                        const std::vector<Scene>& tgts,
                        std::vector<TripletRecord>& out) {
    const std::string qpath = img_path(split, 'q', group);
    write_ppm(render(src, px), (fs::path(out_dir) / qpath).string());
    for (std::size_t k = 0; k < cmds.size(); ++k) {
      const std::string tpath = img_path(split, 't', first_rec + k);
      write_ppm(render(tgts[k], px), (fs::path(out_dir) / tpath).string());
      out.push_back({qpath, caption(cmds[k]), tpath, category_of(cmds[k])});
    }
  };

  for (std::size_t group = 0; train.size() < n_train; ++group) {
    Scene src;
    std::vector<ModCommand> cmds;
    std::vector<Scene> tgts;
    gen_group(std::min(kCommandsPerScene, n_train - train.size()), src, cmds,
              tgts);
    train_pool.insert(src.hash());
    for (const Scene& t : tgts) train_pool.insert(t.hash());
    emit_group("train", group, train.size(), src, cmds, tgts, train);
  }
  for (const auto& r : train) train_captions.push_back(r.caption);

  for (std::size_t group = 0; test.size() < n_test; ++group) {
    Scene src;
    std::vector<ModCommand> cmds;
    std::vector<Scene> tgts;
    // reject any test scene whose hash appears in the train pool
    for (;;) {
      gen_group(std::min(kCommandsPerScene, n_test - test.size()), src, cmds,
                tgts);
      bool clean = !train_pool.count(src.hash());
      for (const Scene& t : tgts)
        if (train_pool.count(t.hash())) clean = false;
      if (clean) break;
    }
    emit_group("test", group, test.size(), src, cmds, tgts, test);
  }

  write_manifest((fs::path(out_dir) / "train.jsonl").string(), train);
  write_manifest((fs::path(out_dir) / "test.jsonl").string(), test);

  // vocabulary from training captions only
  Vocabulary vocab;
  for (const auto& c : train_captions)
    for (const auto& w : tokenize_words(c)) vocab.add(w);
  vocab.save((fs::path(out_dir) / "vocab.txt").string());

  DatasetManifest m;
  m.records = std::move(train);
  m.root = out_dir;
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_manifest: cannot open " + path);
  DatasetManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error("load_manifest: " + path + ":" + std::to_string(lineno) +
                  ": " + e.what());
    }
    TripletRecord r;
    r.query = j.at("query").get<std::string>();
    r.caption = j.at("caption").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.category = j.value("category", "");
    for (const auto& p : {r.query, r.target}) {
      if (!fs::exists(fs::path(m.root) / p)) {
        throw Error("load_manifest: missing image file " +
                    (fs::path(m.root) / p).string());
      }
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace maaf
