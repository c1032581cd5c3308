#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnr/camera.hpp"
#include "rnr/common.hpp"
#include "rnr/image_io.hpp"
#include "rnr/random.hpp"
#include "rnr/tensor.hpp"

namespace rnr {

// ---------------------------------------------------------------------------
// World model: straight road along +Y, ego at the origin in the centre of its
// lane, camera looking down the road. All ground truth is derived in metres
// and projected through the one shared camera.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& action_categories() {
  static const std::vector<std::string> cats{"stop_park",       "follow",       "turn",
                                             "maintain_course", "go_slow_fast", "change_lanes"};
  return cats;
}

struct ObjectClass {
  const char* name;
  double width, length, height;  // metres
  bool vehicle;
};

inline const std::array<ObjectClass, 5>& object_classes() {
  static const std::array<ObjectClass, 5> k{{{"car", 1.8, 4.2, 1.4, true},
                                             {"truck", 2.4, 5.5, 2.6, true},
                                             {"van", 2.0, 4.8, 2.0, true},
                                             {"bin", 0.8, 0.8, 1.1, false},
                                             {"person", 0.5, 0.5, 1.75, false}}};
  return k;
}

struct ObjectColor {
  const char* name;
  std::uint8_t r, g, b;
};

inline const std::array<ObjectColor, 6>& object_colors() {
  static const std::array<ObjectColor, 6> k{{{"red", 209, 26, 26},
                                             {"yellow", 237, 212, 31},
                                             {"white", 245, 245, 245},
                                             {"black", 15, 15, 18},
                                             {"green", 26, 166, 56},
                                             {"blue", 31, 77, 217}}};
  return k;
}

constexpr double kLaneWidth = 3.5;
constexpr std::array<double, 4> kSlotY{6.0, 12.0, 18.0, 24.0};

enum class Side { left, right, center };

inline const char* side_name(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    default: return "center";
  }
}

struct SceneObject {
  int cls = 0;    // index into object_classes
  int color = 0;  // index into object_colors
  Side side = Side::center;
  int slot = 1;      // 1..4 -> kSlotY
  double x = 0.0;    // footprint centre
  double y = 0.0;
  double lane = 0.0;  // lane centre this object is associated with (center side)

  double width() const { return object_classes()[static_cast<std::size_t>(cls)].width; }
  double length() const { return object_classes()[static_cast<std::size_t>(cls)].length; }
  double height() const { return object_classes()[static_cast<std::size_t>(cls)].height; }
};

struct RoadSpec {
  std::vector<double> lane_centers;  // always includes 0 (ego lane)
  double x0() const { return lane_centers.front() - kLaneWidth / 2; }
  double x1() const { return lane_centers.back() + kLaneWidth / 2; }
};

struct Region {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  double cx() const { return (x0 + x1) / 2; }
  double cy() const { return (y0 + y1) / 2; }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  RoadSpec road;
  std::vector<SceneObject> objects;
  std::string action;
  int referred = -1;  // object index, -1 for referent-free actions
  int dir = 0;        // -1 left / +1 right for turn and lane-change actions
  Region region;      // world-space ground-truth region
};

// Desk camera; scales with the configured raster size so that 64 px maps to
// focal 44, principal point (32, 28), height 1.5 m.
inline CameraModel desk_camera(int image_size = 64) {
  CameraModel cam;
  cam.focal = 44.0 * image_size / 64.0;
  cam.cx = image_size / 2.0;
  cam.cy = 28.0 * image_size / 64.0;
  cam.height = 1.5;
  cam.image_h = image_size;
  cam.image_w = image_size;
  return cam;
}

// ---------------------------------------------------------------------------
// Command templates. The language is closed: every surface form is generated
// from these templates, so the vocabulary below is exhaustive by
// construction.
// ---------------------------------------------------------------------------

// {oc} = "<color> <class>", {dir} = left|right
inline const std::map<std::string, std::vector<std::string>>& command_templates() {
  static const std::map<std::string, std::vector<std::string>> t{
      {"stop_park",
       {"park next to the {oc}", "stop beside the {oc}", "pull over near the {oc}",
        "park close to the {oc}"}},
      {"follow",
       {"follow the {oc}", "keep following the {oc}", "drive behind the {oc}",
        "stay behind the {oc}"}},
      {"turn", {"turn {dir}", "take a {dir} turn", "turn to the {dir} here"}},
      {"maintain_course",
       {"continue straight", "keep going straight", "maintain your course",
        "stay on this course"}},
      {"go_slow_fast",
       {"slow down before the {oc}", "go slow near the {oc}",
        "reduce speed as you reach the {oc}"}},
      {"change_lanes",
       {"change to the {dir} lane", "move into the {dir} lane", "switch to the {dir} lane"}}};
  return t;
}

inline const std::vector<std::string>& verbose_fillers() {
  static const std::vector<std::string> f{
      "please",
      "right now",
      "as soon as you can",
      "so that we can pick up my friend over there",
      "because the road ahead looks blocked to me",
      "once the traffic in front of us clears up",
      "and wait until i tell you to keep moving again"};
  return f;
}

// ---------------------------------------------------------------------------
// Vocabulary: UNK id 0, PAD id 1, then the sorted closed lexicon.
// ---------------------------------------------------------------------------
struct Vocabulary {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;
  static constexpr int unk_id = 0;
  static constexpr int pad_id = 1;

  int id_of(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? unk_id : it->second;
  }
  int size() const { return static_cast<int>(tokens.size()); }
};

inline Vocabulary make_vocabulary(const std::vector<std::string>& tokens) {
  Vocabulary v;
  v.tokens = tokens;
  for (std::size_t i = 0; i < tokens.size(); ++i) v.index[tokens[i]] = static_cast<int>(i);
  return v;
}

inline Vocabulary builtin_vocab() {
  std::set<std::string> lex;
  auto add_words = [&](const std::string& text) {
    std::istringstream is(text);
    std::string w;
    while (is >> w)
      if (w != "{oc}" && w != "{dir}") lex.insert(w);
  };
  for (const auto& [action, templates] : command_templates())
    for (const auto& t : templates) add_words(t);
  for (const auto& f : verbose_fillers()) add_words(f);
  for (const auto& c : object_colors()) lex.insert(c.name);
  for (const auto& k : object_classes()) lex.insert(k.name);
  lex.insert("left");
  lex.insert("right");

  std::vector<std::string> tokens{"<unk>", "<pad>"};
  tokens.insert(tokens.end(), lex.begin(), lex.end());
  return make_vocabulary(tokens);
}

struct TokenizedCommand {
  std::vector<int> ids;  // truncated to max_tokens, no padding
  int valid_len = 0;
};

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline TokenizedCommand tokenize(const std::string& text, const Vocabulary& vocab,
                                 int max_tokens) {
  TokenizedCommand out;
  std::istringstream is(lowercase(text));
  std::string w;
  while (is >> w && static_cast<int>(out.ids.size()) < max_tokens)
    out.ids.push_back(vocab.id_of(w));
  out.valid_len = static_cast<int>(out.ids.size());
  return out;
}

inline int count_words(const std::string& text) {
  std::istringstream is(text);
  std::string w;
  int n = 0;
  while (is >> w) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Rendering. Painter's order: sky, grass, road, markings, then objects far to
// near as solid colour rectangles.
// ---------------------------------------------------------------------------

struct ScreenRect {
  int u0 = 0, u1 = -1, v0 = 0, v1 = -1;  // inclusive; empty when u1 < u0
  bool empty() const { return u1 < u0 || v1 < v0; }
  bool contains(int u, int v) const { return !empty() && u >= u0 && u <= u1 && v >= v0 && v <= v1; }
};

// Screen-space rectangle of an object: lateral extent of the footprint at its
// near edge, vertical from the ground line up to the class height.
inline ScreenRect object_screen_rect(const SceneObject& obj, const CameraModel& cam) {
  const double y_near = obj.y - obj.length() / 2;
  if (y_near < 0.5) return {};
  const auto [ul, vg] = cam.ground_to_pixel(obj.x - obj.width() / 2, y_near);
  const auto [ur, vg2] = cam.ground_to_pixel(obj.x + obj.width() / 2, y_near);
  const auto [uc, vt] = cam.project(obj.x, y_near, obj.height());
  ScreenRect r;
  r.u0 = std::max(0, static_cast<int>(std::lround(ul)));
  r.u1 = std::min(cam.image_w - 1, static_cast<int>(std::lround(ur)));
  r.v0 = std::max(0, static_cast<int>(std::lround(vt)));
  r.v1 = std::min(cam.image_h - 1, static_cast<int>(std::lround(vg)));
  return r;
}

inline RgbImage render_scene(const SceneSpec& scene, const CameraModel& cam) {
  const int H = cam.image_h, W = cam.image_w;
  RgbImage img{H, W, std::vector<std::uint8_t>(3u * H * W)};
  const std::uint8_t sky[3] = {136, 198, 235};
  const std::uint8_t grass[3] = {61, 94, 41};
  const std::uint8_t road[3] = {115, 115, 120};
  const std::uint8_t marking[3] = {204, 204, 196};

  for (int v = 0; v < H; ++v) {
    const bool ground = cam.below_horizon(v);
    double Y = 0, x_lo = 0, x_hi = 0;
    if (ground) {
      Y = cam.focal * cam.height / (v - cam.cy);
      x_lo = scene.road.x0();
      x_hi = scene.road.x1();
    }
    for (int u = 0; u < W; ++u) {
      const std::uint8_t* c = sky;
      if (ground) {
        const double X = (u - cam.cx) * Y / cam.focal;
        c = (Y <= 90.0 && X >= x_lo && X <= x_hi) ? road : grass;
      }
      std::uint8_t* p = img.at(v, u);
      p[0] = c[0];
      p[1] = c[1];
      p[2] = c[2];
    }
    // lane markings: solid edges, dashed interior boundaries
    if (ground && Y <= 60.0) {
      std::vector<double> boundaries{scene.road.x0(), scene.road.x1()};
      for (std::size_t i = 0; i + 1 < scene.road.lane_centers.size(); ++i)
        boundaries.push_back((scene.road.lane_centers[i] + scene.road.lane_centers[i + 1]) / 2);
      for (std::size_t bi = 0; bi < boundaries.size(); ++bi) {
        const bool interior = bi >= 2;
        if (interior && static_cast<long>(std::floor(Y / 2.0)) % 2 != 0) continue;  // dash gap
        const int u = static_cast<int>(std::lround(cam.cx + cam.focal * boundaries[bi] / Y));
        if (u >= 0 && u < W) {
          std::uint8_t* p = img.at(v, u);
          p[0] = marking[0];
          p[1] = marking[1];
          p[2] = marking[2];
        }
      }
    }
  }

  // objects, far to near
  std::vector<const SceneObject*> order;
  for (const auto& o : scene.objects) order.push_back(&o);
  std::stable_sort(order.begin(), order.end(),
                   [](const SceneObject* a, const SceneObject* b) { return a->y > b->y; });
  for (const SceneObject* o : order) {
    const ScreenRect r = object_screen_rect(*o, cam);
    if (r.empty()) continue;
    const ObjectColor& col = object_colors()[static_cast<std::size_t>(o->color)];
    for (int v = r.v0; v <= r.v1; ++v)
      for (int u = r.u0; u <= r.u1; ++u) {
        std::uint8_t* p = img.at(v, u);
        p[0] = col.r;
        p[1] = col.g;
        p[2] = col.b;
      }
  }
  return img;
}

// Ground-truth mask: pixels whose ground point falls inside the region and on
// the road, minus pixels covered by rendered objects.
inline GrayImage synthesize_mask(const SceneSpec& scene, const CameraModel& cam) {
  const int H = cam.image_h, W = cam.image_w;
  GrayImage mask{H, W, std::vector<std::uint8_t>(static_cast<std::size_t>(H) * W, 0)};
  const double margin = 0.15;
  const double rx0 = std::max(scene.region.x0, scene.road.x0() + margin);
  const double rx1 = std::min(scene.region.x1, scene.road.x1() - margin);
  std::vector<ScreenRect> rects;
  for (const auto& o : scene.objects) rects.push_back(object_screen_rect(o, cam));
  for (int v = 0; v < H; ++v) {
    if (!cam.below_horizon(v)) continue;
    const double Y = cam.focal * cam.height / (v - cam.cy);
    if (Y < scene.region.y0 || Y > scene.region.y1) continue;
    for (int u = 0; u < W; ++u) {
      const double X = (u - cam.cx) * Y / cam.focal;
      if (X < rx0 || X > rx1) continue;
      bool covered = false;
      for (const auto& r : rects)
        if (r.contains(u, v)) covered = true;
      if (!covered) mask.at(v, u) = 255;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Scene generation.
// ---------------------------------------------------------------------------
namespace detail_gen {

inline double side_x(Side side, const RoadSpec& road, double width) {
  return side == Side::left ? road.x0() + width / 2 + 0.3 : road.x1() - width / 2 - 0.3;
}

inline bool rects_overlap(double ax0, double ay0, double ax1, double ay1, double bx0, double by0,
                          double bx1, double by1) {
  return ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1;
}

inline bool object_overlaps(const SceneObject& a, const SceneObject& b, double margin) {
  return rects_overlap(a.x - a.width() / 2 - margin, a.y - a.length() / 2 - margin,
                       a.x + a.width() / 2 + margin, a.y + a.length() / 2 + margin,
                       b.x - b.width() / 2, b.y - b.length() / 2, b.x + b.width() / 2,
                       b.y + b.length() / 2);
}

inline bool region_overlaps_object(const Region& r, const SceneObject& o, double margin) {
  return rects_overlap(r.x0 - margin, r.y0 - margin, r.x1 + margin, r.y1 + margin,
                       o.x - o.width() / 2, o.y - o.length() / 2, o.x + o.width() / 2,
                       o.y + o.length() / 2);
}

// Nearby roadside objects fall outside the frame (the near edge of a slot-1
// side object projects far past the image border), so referents must pass a
// full-visibility check and distractors at least a partial one.
inline bool fully_visible(const SceneObject& o, const CameraModel& cam) {
  const double y_near = o.y - o.length() / 2;
  if (y_near < 1.0) return false;
  const double ul = cam.cx + cam.focal * (o.x - o.width() / 2) / y_near;
  const double ur = cam.cx + cam.focal * (o.x + o.width() / 2) / y_near;
  const double vg = cam.cy + cam.focal * cam.height / y_near;
  return ul >= -0.5 && ur <= cam.image_w - 0.5 && vg <= cam.image_h + 6.0;
}

}  // namespace detail_gen

struct GenOptions {
  int image_size = 64;
  int max_tokens = 12;
  bool verbose = false;  // pad commands with distractor clauses (length ablations)
};

struct GeneratedSample {
  SceneSpec scene;
  RgbImage image;
  GrayImage mask;
  std::string command;
  int word_count = 0;
};

inline std::uint64_t split_seed(std::uint64_t global_seed, const std::string& split) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : split) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return global_seed ^ h;
}

// Builds one sample; a pure function of (global_seed, split, index).
inline GeneratedSample generate_sample(std::uint64_t global_seed, const std::string& split,
                                       std::uint64_t index, const GenOptions& opt = {}) {
  const CameraModel cam = desk_camera(opt.image_size);
  const std::uint64_t base = split_seed(global_seed, split);

  // round-robin over a seed-shuffled category order keeps the histogram flat
  // while remaining a pure function of (seed, index)
  std::vector<int> action_perm{0, 1, 2, 3, 4, 5};
  {
    Xoshiro256 ar(mix_seed(base, 0xAC710Full));
    ar.shuffle(action_perm);
  }
  const std::string action =
      action_categories()[static_cast<std::size_t>(action_perm[index % 6])];

  for (int attempt = 0; attempt < 32; ++attempt) {
    Xoshiro256 rng(mix_seed(mix_seed(base, index), static_cast<std::uint64_t>(attempt)));
    SceneSpec scene;
    scene.seed = mix_seed(base, index);
    scene.action = action;

    // road: ego lane always centred at 0; 2 or 3 lanes
    const int layout = static_cast<int>(rng.next_below(3));
    if (layout == 0) scene.road.lane_centers = {-kLaneWidth, 0.0, kLaneWidth};
    else if (layout == 1) scene.road.lane_centers = {-kLaneWidth, 0.0};
    else scene.road.lane_centers = {0.0, kLaneWidth};

    // direction for turn / lane change
    if (action == "turn") {
      scene.dir = rng.next_below(2) == 0 ? -1 : 1;
    } else if (action == "change_lanes") {
      std::vector<int> dirs;
      for (double c : scene.road.lane_centers)
        if (c < 0) dirs.push_back(-1);
        else if (c > 0) dirs.push_back(1);
      scene.dir = dirs[rng.next_below(dirs.size())];
    }

    // referent
    const bool needs_referent =
        action == "stop_park" || action == "follow" || action == "go_slow_fast";
    if (needs_referent) {
      SceneObject ref;
      ref.color = static_cast<int>(rng.next_below(object_colors().size()));
      if (action == "follow") {
        ref.cls = static_cast<int>(rng.next_below(3));  // vehicles only
        ref.side = Side::center;
        ref.lane = scene.road.lane_centers[rng.next_below(scene.road.lane_centers.size())];
        ref.x = ref.lane;
        ref.slot = 2 + static_cast<int>(rng.next_below(2));  // slots 2..3
      } else {
        ref.cls = static_cast<int>(rng.next_below(object_classes().size()));
        ref.side = rng.next_below(2) == 0 ? Side::left : Side::right;
        ref.slot = 2 + static_cast<int>(rng.next_below(2));  // slots 2..3
        ref.x = detail_gen::side_x(ref.side, scene.road, ref.width());
      }
      ref.y = kSlotY[static_cast<std::size_t>(ref.slot - 1)];
      if (!detail_gen::fully_visible(ref, cam)) continue;
      scene.objects.push_back(ref);
      scene.referred = 0;
    }

    // ground-truth region in world space
    const double half_lane = kLaneWidth / 2 - 0.2;
    Region reg;
    if (action == "stop_park") {
      const SceneObject& ref = scene.objects[0];
      const double gap = 0.3, width = 2.6;
      if (ref.side == Side::left) {
        reg.x0 = ref.x + ref.width() / 2 + gap;
        reg.x1 = reg.x0 + width;
      } else {
        reg.x1 = ref.x - ref.width() / 2 - gap;
        reg.x0 = reg.x1 - width;
      }
      reg.y0 = ref.y - 2.0;
      reg.y1 = ref.y + 2.0;
    } else if (action == "follow") {
      const SceneObject& ref = scene.objects[0];
      reg.x0 = ref.lane - half_lane;
      reg.x1 = ref.lane + half_lane;
      reg.y0 = ref.y - 8.0;
      reg.y1 = ref.y - 4.0;
    } else if (action == "turn") {
      if (scene.dir < 0) {
        reg.x0 = scene.road.x0() + 0.2;
        reg.x1 = -0.3;
      } else {
        reg.x0 = 0.3;
        reg.x1 = scene.road.x1() - 0.2;
      }
      reg.y0 = 2.0;
      reg.y1 = 9.0;
    } else if (action == "maintain_course") {
      reg.x0 = -half_lane;
      reg.x1 = half_lane;
      reg.y0 = 4.0;
      reg.y1 = 17.5;
    } else if (action == "go_slow_fast") {
      const SceneObject& ref = scene.objects[0];
      reg.x0 = -half_lane;
      reg.x1 = half_lane;
      reg.y0 = 2.0;
      reg.y1 = ref.y - ref.length() / 2 - 0.8;
    } else {  // change_lanes
      const double target = scene.dir < 0 ? -kLaneWidth : kLaneWidth;
      reg.x0 = target - half_lane;
      reg.x1 = target + half_lane;
      reg.y0 = 4.0;
      reg.y1 = 12.0;
    }
    scene.region = reg;

    // distractors: unique (color, class) pairs, disjoint footprints, clear of
    // the region
    const int extras = static_cast<int>(rng.next_below(3));
    for (int d = 0; d < extras; ++d) {
      for (int tries = 0; tries < 10; ++tries) {
        SceneObject o;
        o.cls = static_cast<int>(rng.next_below(object_classes().size()));
        o.color = static_cast<int>(rng.next_below(object_colors().size()));
        const int s = static_cast<int>(rng.next_below(3));
        o.side = s == 0 ? Side::left : (s == 1 ? Side::right : Side::center);
        if (o.side == Side::center) {
          o.lane = scene.road.lane_centers[rng.next_below(scene.road.lane_centers.size())];
          o.x = o.lane;
          o.slot = (o.lane == 0.0 ? 1 : 2) + static_cast<int>(rng.next_below(3));
        } else {
          o.x = detail_gen::side_x(o.side, scene.road, o.width());
          o.slot = 2 + static_cast<int>(rng.next_below(3));
        }
        o.y = kSlotY[static_cast<std::size_t>(o.slot - 1)];
        bool ok = object_screen_rect(o, cam).u1 - object_screen_rect(o, cam).u0 >= 2;
        for (const auto& other : scene.objects) {
          if (detail_gen::object_overlaps(o, other, 0.3)) ok = false;
          if (o.cls == other.cls && o.color == other.color) ok = false;  // unambiguous reference
        }
        if (detail_gen::region_overlaps_object(scene.region, o, 0.3)) ok = false;
        if (ok) {
          scene.objects.push_back(o);
          break;
        }
      }
    }

    // sanity: region clear of every non-referent object, and of the referent
    // footprint itself
    bool region_ok = true;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const double m = static_cast<int>(i) == scene.referred ? 0.0 : 0.3;
      if (detail_gen::region_overlaps_object(scene.region, scene.objects[i], m)) region_ok = false;
    }
    if (!region_ok) continue;

    // command text
    const auto& templates = command_templates().at(action);
    std::string text = templates[rng.next_below(templates.size())];
    auto replace_all = [](std::string s, const std::string& from, const std::string& to) {
      const auto pos = s.find(from);
      if (pos != std::string::npos) s.replace(pos, from.size(), to);
      return s;
    };
    if (scene.referred >= 0) {
      const SceneObject& ref = scene.objects[static_cast<std::size_t>(scene.referred)];
      const std::string oc =
          std::string(object_colors()[static_cast<std::size_t>(ref.color)].name) + " " +
          object_classes()[static_cast<std::size_t>(ref.cls)].name;
      text = replace_all(text, "{oc}", oc);
    }
    if (scene.dir != 0) text = replace_all(text, "{dir}", scene.dir < 0 ? "left" : "right");
    if (opt.verbose) {
      const int fillers = 1 + static_cast<int>(rng.next_below(4));
      std::vector<std::size_t> pick;
      for (std::size_t i = 0; i < verbose_fillers().size(); ++i) pick.push_back(i);
      rng.shuffle(pick);
      for (int i = 0; i < fillers; ++i) text += " " + verbose_fillers()[pick[static_cast<std::size_t>(i)]];
    }

    GeneratedSample out;
    out.scene = scene;
    out.image = render_scene(scene, cam);
    out.mask = synthesize_mask(scene, cam);
    out.command = text;
    out.word_count = count_words(text);

    int area = 0;
    for (auto v : out.mask.pixels) area += v != 0;
    if (area < 6) continue;  // degenerate raster: resample the scene
    return out;
  }
  throw ContractError("generate_sample: could not build a valid scene for index " +
                      std::to_string(index));
}

// ---------------------------------------------------------------------------
// Scene JSON (per-sample metadata file; also the planner's scene input).
// ---------------------------------------------------------------------------
inline nlohmann::ordered_json scene_to_json(const SceneSpec& scene, const CameraModel& cam) {
  nlohmann::ordered_json j;
  j["seed"] = scene.seed;
  j["camera"] = {{"focal", cam.focal}, {"cx", cam.cx},        {"cy", cam.cy},
                 {"height", cam.height}, {"image_h", cam.image_h}, {"image_w", cam.image_w}};
  j["road"] = {{"lane_width", kLaneWidth}, {"lane_centers", scene.road.lane_centers}};
  nlohmann::ordered_json objs = nlohmann::ordered_json::array();
  for (const auto& o : scene.objects) {
    objs.push_back({{"class", object_classes()[static_cast<std::size_t>(o.cls)].name},
                    {"color", object_colors()[static_cast<std::size_t>(o.color)].name},
                    {"side", side_name(o.side)},
                    {"slot", o.slot},
                    {"x", o.x},
                    {"y", o.y},
                    {"width", o.width()},
                    {"length", o.length()}});
  }
  j["objects"] = objs;
  j["action"] = scene.action;
  j["referred"] = scene.referred;
  j["dir"] = scene.dir;
  j["region"] = {{"x0", scene.region.x0}, {"y0", scene.region.y0}, {"x1", scene.region.x1},
                 {"y1", scene.region.y1}};
  return j;
}

struct SceneFile {
  CameraModel camera;
  std::vector<std::array<double, 4>> obstacles;  // x0,y0,x1,y1 footprints
  Region region;
};

inline SceneFile parse_scene_json(const nlohmann::json& j) {
  SceneFile s;
  if (j.contains("camera")) {
    const auto& c = j.at("camera");
    s.camera.focal = c.at("focal");
    s.camera.cx = c.at("cx");
    s.camera.cy = c.at("cy");
    s.camera.height = c.at("height");
    s.camera.image_h = c.at("image_h");
    s.camera.image_w = c.at("image_w");
  }
  for (const auto& o : j.value("objects", nlohmann::json::array())) {
    const double x = o.at("x"), y = o.at("y"), w = o.at("width"), l = o.at("length");
    s.obstacles.push_back({x - w / 2, y - l / 2, x + w / 2, y + l / 2});
  }
  if (j.contains("region")) {
    s.region.x0 = j["region"].at("x0");
    s.region.y0 = j["region"].at("y0");
    s.region.x1 = j["region"].at("x1");
    s.region.y1 = j["region"].at("y1");
  }
  return s;
}

inline SceneFile load_scene_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open scene file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("scene file " + path + ": " + e.what());
  }
  return parse_scene_json(j);
}

// ---------------------------------------------------------------------------
// Dataset files. Layout under <out>/<split>/: manifest.jsonl plus images/,
// masks/, scenes/; the vocabulary sits at <out>/vocab.txt (fixed list,
// independent of seed).
// ---------------------------------------------------------------------------
struct ManifestEntry {
  int id = 0;
  std::string image, mask, scene;
  std::string command;
  std::string action;
  int word_count = 0;
  int referred = -1;
  std::uint64_t seed = 0;
};

inline std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["image"] = e.image;
  j["mask"] = e.mask;
  j["scene"] = e.scene;
  j["command"] = e.command;
  j["action"] = e.action;
  j["word_count"] = e.word_count;
  j["referred"] = e.referred;
  j["seed"] = e.seed;
  return j.dump();
}

inline ManifestEntry parse_manifest_line(const std::string& line) {
  nlohmann::json j = nlohmann::json::parse(line);
  ManifestEntry e;
  e.id = j.at("id");
  e.image = j.at("image");
  e.mask = j.at("mask");
  e.scene = j.at("scene");
  e.command = j.at("command");
  e.action = j.at("action");
  e.word_count = j.at("word_count");
  e.referred = j.at("referred");
  e.seed = j.at("seed");
  return e;
}

inline void write_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write vocab file: " + path);
  for (const auto& t : vocab.tokens) f << t << "\n";
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return make_vocabulary(tokens);
}

inline std::vector<ManifestEntry> generate_dataset(int n, std::uint64_t global_seed,
                                                   const std::string& split,
                                                   const std::string& out_dir,
                                                   const GenOptions& opt = {}) {
  if (n < 1) throw ContractError("generate_dataset: n must be >= 1");
  namespace fs = std::filesystem;
  const fs::path root(out_dir);
  const fs::path sdir = root / split;
  std::error_code ec;
  fs::create_directories(sdir / "images", ec);
  fs::create_directories(sdir / "masks", ec);
  fs::create_directories(sdir / "scenes", ec);
  if (ec) throw IoError("cannot create output directory " + sdir.string() + ": " + ec.message());

  const CameraModel cam = desk_camera(opt.image_size);
  write_vocab((root / "vocab.txt").string(), builtin_vocab());

  std::vector<ManifestEntry> entries;
  std::ofstream manifest(sdir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw IoError("cannot write manifest in " + sdir.string());
  for (int i = 0; i < n; ++i) {
    GeneratedSample s = generate_sample(global_seed, split, static_cast<std::uint64_t>(i), opt);
    char name[32];
    std::snprintf(name, sizeof(name), "%06d", i);
    ManifestEntry e;
    e.id = i;
    e.image = "images/" + std::string(name) + ".ppm";
    e.mask = "masks/" + std::string(name) + ".pgm";
    e.scene = "scenes/" + std::string(name) + ".json";
    e.command = s.command;
    e.action = s.scene.action;
    e.word_count = s.word_count;
    e.referred = s.scene.referred;
    e.seed = s.scene.seed;
    write_ppm((sdir / e.image).string(), s.image);
    write_pgm((sdir / e.mask).string(), s.mask);
    {
      std::ofstream sf(sdir / e.scene, std::ios::binary);
      sf << scene_to_json(s.scene, cam).dump(1) << "\n";
    }
    manifest << manifest_line(e) << "\n";
    entries.push_back(std::move(e));
  }
  return entries;
}

// In-memory sample for training and evaluation.
struct LoadedSample {
  int id = 0;
  Tensor<float> image;  // [3,S,S] in [0,1]
  std::vector<int> token_ids;
  GrayImage gt;
  std::string action;
  int word_count = 0;
  std::string scene_path;
};

struct DataSet {
  std::vector<LoadedSample> samples;
  Vocabulary vocab;
};

inline Tensor<float> image_to_tensor(const RgbImage& img) {
  Tensor<float> t({3, img.h, img.w});
  const std::size_t hw = static_cast<std::size_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const std::uint8_t* p = img.at(y, x);
      const std::size_t i = static_cast<std::size_t>(y) * img.w + x;
      t.data()[0 * hw + i] = p[0] / 255.0f;
      t.data()[1 * hw + i] = p[1] / 255.0f;
      t.data()[2 * hw + i] = p[2] / 255.0f;
    }
  return t;
}

inline DataSet load_dataset(const std::string& dir, const std::string& split, int max_tokens) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  DataSet ds;
  ds.vocab = load_vocab((root / "vocab.txt").string());
  std::ifstream manifest(root / split / "manifest.jsonl");
  if (!manifest) throw IoError("cannot open manifest for split '" + split + "' under " + dir);
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    ManifestEntry e = parse_manifest_line(line);
    LoadedSample s;
    s.id = e.id;
    s.image = image_to_tensor(read_ppm((root / split / e.image).string()));
    s.gt = read_pgm((root / split / e.mask).string());
    s.token_ids = tokenize(e.command, ds.vocab, max_tokens).ids;
    s.action = e.action;
    s.word_count = e.word_count;
    s.scene_path = (root / split / e.scene).string();
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ContractError("dataset split '" + split + "' is empty");
  return ds;
}

}  // namespace rnr
