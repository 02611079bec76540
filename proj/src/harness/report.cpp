#include "dtcmr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dtcmr::harness {

namespace {

constexpr double kMdMax = 2.5e-3;

// Viridis at nine evenly spaced stops.
constexpr double kViridis[9][3] = {{68, 1, 84},    {71, 44, 122},   {59, 81, 139},   {44, 113, 142}, {33, 144, 141},
                                   {39, 173, 129}, {92, 200, 99},   {170, 220, 50},  {253, 231, 37}};

std::array<int, 3> sequential(double t) {
  t = std::clamp(t, 0.0, 1.0) * 8.0;
  const int i = std::min(7, static_cast<int>(t));
  const double f = t - i;
  std::array<int, 3> c;
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<int>(std::lround(kViridis[i][k] + f * (kViridis[i + 1][k] - kViridis[i][k])));
  return c;
}

// Hue wheel, so -90 and 90 share a colour.
std::array<int, 3> cyclic(double deg) {
  const double h = std::fmod((std::clamp(deg, -90.0, 90.0) + 90.0) / 180.0 * 6.0, 6.0);
  const int sector = static_cast<int>(h);
  const double f = h - sector;
  const double v = 0.92, s = 0.85;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
  case 0: r = v, g = t, b = p; break;
  case 1: r = q, g = v, b = p; break;
  case 2: r = p, g = v, b = t; break;
  case 3: r = p, g = q, b = v; break;
  case 4: r = t, g = p, b = v; break;
  default: r = v, g = p, b = q; break;
  }
  return {static_cast<int>(std::lround(r * 255)), static_cast<int>(std::lround(g * 255)),
          static_cast<int>(std::lround(b * 255))};
}

std::string hex(const std::array<int, 3> &c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

std::string escape(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

struct Scale {
  double lo, hi;
  const char *label;
  std::vector<std::pair<double, std::string>> ticks;
};

Scale scale_for(int metric) {
  switch (metric) {
  case kHa: return {-90, 90, "HA (deg)", {{-90, "-90"}, {0, "0"}, {90, "90"}}};
  case kE2a: return {-90, 90, "E2A (deg)", {{-90, "-90"}, {0, "0"}, {90, "90"}}};
  case kMd: return {0, kMdMax, "MD (1e-3 mm^2/s)", {{0, "0"}, {1.25e-3, "1.25"}, {kMdMax, "2.5"}}};
  default: return {0, 1, "FA", {{0, "0"}, {0.5, "0.5"}, {1, "1"}}};
  }
}

const Image &image_for(const MapSet &m, int metric) {
  switch (metric) {
  case kHa: return m.ha;
  case kE2a: return m.e2a;
  case kMd: return m.md;
  default: return m.fa;
  }
}

} // namespace

std::array<int, 3> map_colour(int metric, double value) {
  if (metric == kHa || metric == kE2a)
    return cyclic(value);
  if (metric == kMd)
    return sequential(value / kMdMax);
  return sequential(value);
}

std::string render_maps_svg(const MapSet &maps, const std::string &footer) {
  const int rows = maps.mask.size.rows, cols = maps.mask.size.cols;
  if (rows == 0 || cols == 0 || maps.mask.count() == 0)
    throw ValidationError("render: empty map set");

  // Panels show the mask's bounding box plus a margin.
  int r0 = rows, r1 = -1, c0 = cols, c1 = -1;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (maps.mask.at(r, c)) {
        r0 = std::min(r0, r), r1 = std::max(r1, r);
        c0 = std::min(c0, c), c1 = std::max(c1, c);
      }
  const int margin = 4;
  r0 = std::max(0, r0 - margin), c0 = std::max(0, c0 - margin);
  r1 = std::min(rows - 1, r1 + margin), c1 = std::min(cols - 1, c1 + margin);
  const int h = r1 - r0 + 1, w = c1 - c0 + 1;
  const double px = 240.0 / std::max(h, w);
  const double panel_w = w * px, panel_h = h * px;
  const double gap = 30, bar_w = 16, bar_gap = 56, top = 36;
  const double cell = panel_w + bar_gap + bar_w + gap;
  const double width = 4 * cell + gap, height = top + panel_h + 48;

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int metric = 0; metric < kMetricCount; ++metric) {
    const Scale sc = scale_for(metric);
    const Image &img = image_for(maps, metric);
    const double x0 = gap + metric * cell;
    os << "<g id=\"" << kMetricNames[metric] << "\">\n";
    os << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << top - 12 << "\" text-anchor=\"middle\">" << escape(sc.label)
       << "</text>\n";
    os << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << panel_w << "\" height=\"" << panel_h
       << "\" fill=\"black\"/>\n";
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        if (!maps.mask.at(r, c))
          continue;
        const std::size_t p = static_cast<std::size_t>(r) * cols + c;
        const bool angle = metric == kHa || metric == kE2a;
        const std::string fill =
            angle && (maps.flags[p] & kUndefinedAngles) ? "#808080" : hex(map_colour(metric, img.data[p]));
        os << "<rect x=\"" << x0 + (c - c0) * px << "\" y=\"" << top + (r - r0) * px << "\" width=\"" << px + 0.02
           << "\" height=\"" << px + 0.02 << "\" fill=\"" << fill << "\"/>\n";
      }
    // Colour bar, high values at the top.
    const double bx = x0 + panel_w + 12;
    const int steps = 64;
    for (int k = 0; k < steps; ++k) {
      const double v = sc.hi - (k + 0.5) / steps * (sc.hi - sc.lo);
      os << "<rect x=\"" << bx << "\" y=\"" << top + k * panel_h / steps << "\" width=\"" << bar_w << "\" height=\""
         << panel_h / steps + 0.02 << "\" fill=\"" << hex(map_colour(metric, v)) << "\"/>\n";
    }
    os << "<rect x=\"" << bx << "\" y=\"" << top << "\" width=\"" << bar_w << "\" height=\"" << panel_h
       << "\" fill=\"none\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
    for (const auto &[v, text] : sc.ticks) {
      const double y = top + (sc.hi - v) / (sc.hi - sc.lo) * panel_h;
      os << "<line x1=\"" << bx + bar_w << "\" y1=\"" << y << "\" x2=\"" << bx + bar_w + 4 << "\" y2=\"" << y
         << "\" stroke=\"black\"/>\n";
      os << "<text x=\"" << bx + bar_w + 6 << "\" y=\"" << y + 4 << "\">" << text << "</text>\n";
    }
    os << "</g>\n";
  }
  os << "<text x=\"" << gap << "\" y=\"" << height - 14 << "\" font-size=\"10\" fill=\"#444\">" << escape(footer)
     << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

} // namespace dtcmr::harness
