#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "refgame/rng.hpp"
#include "refgame/worldgen.hpp"

namespace refgame {

/// One drawable primitive in unit-square coordinates.
struct SceneShape {
  std::string kind;
  double x = 0.0;
  double y = 0.0;
  double size = 0.0;
  double rotation = 0.0;  // degrees
  std::string fill;

  bool operator==(const SceneShape&) const = default;
};

/// Resolution-independent picture of a scene instance. Shape kind follows the
/// category, color family follows the concept, and pose/arrangement follow
/// the instance's render seed.
struct SceneDescription {
  std::size_t instance_id = 0;
  std::size_t concept_id = 0;
  std::string shape_kind;
  std::string color_family;
  std::string background;
  std::vector<SceneShape> shapes;

  bool operator==(const SceneDescription&) const = default;
};

namespace detail {

inline const std::vector<std::string>& shape_kinds() {
  static const std::vector<std::string> k = {"circle", "square", "triangle", "diamond",
                                             "star",   "hexagon", "cross",   "ring"};
  return k;
}

inline const std::vector<std::string>& color_families() {
  static const std::vector<std::string> k = {"red",   "orange", "yellow", "lime",
                                             "green", "teal",   "cyan",   "azure",
                                             "blue",  "violet", "magenta", "rose"};
  return k;
}

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << round4(v);
  return os.str();
}

}  // namespace detail

inline SceneDescription render_scene(const SceneInstance& instance, const World& world) {
  if (instance.instance_id >= world.instances.size() ||
      world.instances[instance.instance_id].concept_id != instance.concept_id ||
      world.instances[instance.instance_id].render_seed != instance.render_seed) {
    throw LookupError("render_scene: instance " + std::to_string(instance.instance_id) +
                      " does not belong to this world");
  }
  const Concept& cpt = world.concepts.at(instance.concept_id);
  const std::size_t within = cpt.concept_id % world.config.concepts_per_category;
  const auto& kinds = detail::shape_kinds();
  const auto& families = detail::color_families();

  SceneDescription d;
  d.instance_id = instance.instance_id;
  d.concept_id = instance.concept_id;
  d.shape_kind = kinds[cpt.category_id % kinds.size()];
  const std::size_t family = (within + 5 * (cpt.category_id / kinds.size())) % families.size();
  d.color_family = families[family];
  d.background = "#f7f7f2";

  const double hue = 30.0 * static_cast<double>(family);
  const double base_size = 0.09 + 0.01 * static_cast<double>(within % 4);
  const std::size_t count = 1 + within % 3 + static_cast<std::size_t>(instance.render_seed % 2);

  Rng rng(instance.render_seed);
  std::uniform_real_distribution<double> pos(0.18, 0.82);
  std::uniform_real_distribution<double> jitter(0.85, 1.15);
  std::uniform_real_distribution<double> angle(0.0, 360.0);
  std::uniform_real_distribution<double> light(40.0, 60.0);
  for (std::size_t i = 0; i < count; ++i) {
    SceneShape s;
    s.kind = d.shape_kind;
    s.x = detail::round4(pos(rng));
    s.y = detail::round4(pos(rng));
    s.size = detail::round4(base_size * jitter(rng));
    s.rotation = detail::round4(angle(rng));
    s.fill = "hsl(" + detail::fmt_num(hue) + ",70%," + detail::fmt_num(std::round(light(rng))) + "%)";
    d.shapes.push_back(std::move(s));
  }
  return d;
}

inline SceneDescription render_scene(std::size_t instance_id, const World& world) {
  return render_scene(world.instance(instance_id), world);
}

namespace detail {

inline std::string polygon(const SceneShape& s, std::size_t n, double inner_ratio) {
  // n outer vertices; inner_ratio > 0 interleaves inner vertices (stars)
  std::ostringstream os;
  const std::size_t steps = inner_ratio > 0.0 ? 2 * n : n;
  for (std::size_t i = 0; i < steps; ++i) {
    const double r = (inner_ratio > 0.0 && i % 2 == 1) ? s.size * inner_ratio : s.size;
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(steps) -
                     std::numbers::pi / 2.0;
    if (i) os << ' ';
    os << fmt_num(s.x + r * std::cos(a)) << ',' << fmt_num(s.y + r * std::sin(a));
  }
  return "<polygon points=\"" + os.str() + "\" fill=\"" + s.fill + "\"";
}

}  // namespace detail

/// SVG rendering of a scene in a 1x1 view box scaled to `pixels`.
inline std::string to_svg(const SceneDescription& d, int pixels = 256) {
  using detail::fmt_num;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << pixels << "\" height=\"" << pixels
     << "\" viewBox=\"0 0 1 1\">";
  os << "<rect width=\"1\" height=\"1\" fill=\"" << d.background << "\"/>";
  for (const auto& s : d.shapes) {
    const std::string rot = " transform=\"rotate(" + fmt_num(s.rotation) + " " + fmt_num(s.x) + " " +
                            fmt_num(s.y) + ")\"";
    if (s.kind == "circle") {
      os << "<circle cx=\"" << fmt_num(s.x) << "\" cy=\"" << fmt_num(s.y) << "\" r=\"" << fmt_num(s.size)
         << "\" fill=\"" << s.fill << "\"/>";
    } else if (s.kind == "ring") {
      os << "<circle cx=\"" << fmt_num(s.x) << "\" cy=\"" << fmt_num(s.y) << "\" r=\"" << fmt_num(s.size)
         << "\" fill=\"none\" stroke=\"" << s.fill << "\" stroke-width=\"" << fmt_num(s.size * 0.35)
         << "\"/>";
    } else if (s.kind == "square") {
      os << "<rect x=\"" << fmt_num(s.x - s.size) << "\" y=\"" << fmt_num(s.y - s.size) << "\" width=\""
         << fmt_num(2 * s.size) << "\" height=\"" << fmt_num(2 * s.size) << "\" fill=\"" << s.fill << "\""
         << rot << "/>";
    } else if (s.kind == "cross") {
      os << "<g" << rot << " fill=\"" << s.fill << "\">";
      os << "<rect x=\"" << fmt_num(s.x - s.size) << "\" y=\"" << fmt_num(s.y - s.size * 0.3)
         << "\" width=\"" << fmt_num(2 * s.size) << "\" height=\"" << fmt_num(0.6 * s.size) << "\"/>";
      os << "<rect x=\"" << fmt_num(s.x - s.size * 0.3) << "\" y=\"" << fmt_num(s.y - s.size)
         << "\" width=\"" << fmt_num(0.6 * s.size) << "\" height=\"" << fmt_num(2 * s.size) << "\"/>";
      os << "</g>";
    } else {
      std::size_t n = 3;
      double inner = 0.0;
      if (s.kind == "diamond") n = 4;
      if (s.kind == "hexagon") n = 6;
      if (s.kind == "star") {
        n = 5;
        inner = 0.45;
      }
      os << detail::polygon(s, n, inner) << rot << "/>";
    }
  }
  os << "</svg>";
  return os.str();
}

}  // namespace refgame
