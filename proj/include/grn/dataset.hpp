#pragma once

// Dataset manifest, directory scanning, train/test splitting, the
// same-writer word/page pairing sampler, and a synthetic corpus generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "grn/image.hpp"
#include "grn/rng.hpp"
#include "grn/tensor.hpp"

namespace grn {

enum class Kind { Page, Word };

struct ManifestEntry {
  std::string writer;
  Kind kind = Kind::Word;
  std::string path;  // relative to the dataset root; unique key
  int image = -1;    // index into DatasetManifest::images once loaded
};

struct DatasetManifest {
  std::string root;
  std::vector<std::string> writers;  // sorted; class id = position
  std::unordered_map<std::string, int> class_of;
  std::vector<ManifestEntry> entries;
  std::vector<GrayImage> images;

  int classes() const { return static_cast<int>(writers.size()); }
  int class_id(const std::string& writer) const {
    auto it = class_of.find(writer);
    if (it == class_of.end()) fail_data("unknown writer: " + writer);
    return it->second;
  }
};

namespace detail {

constexpr std::uint64_t kPrepTag = 0x70726570ULL;
constexpr std::uint64_t kEpochTag = 0x65706f63ULL;
constexpr std::uint64_t kEvalTag = 0x6576616cULL;
constexpr std::uint64_t kStyleTag = 0x7374796cULL;
constexpr std::uint64_t kPageTag = 0x70616765ULL;
constexpr std::uint64_t kWordTag = 0x776f7264ULL;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline bool image_file(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".pgm";
}

}  // namespace detail

// assigns contiguous class ids to the sorted distinct writers and checks
// that every writer contributes both kinds
inline void finalize_classes(DatasetManifest& m) {
  std::set<std::string> names;
  std::map<std::string, std::pair<int, int>> counts;  // writer -> (pages, words)
  for (const ManifestEntry& e : m.entries) {
    names.insert(e.writer);
    auto& c = counts[e.writer];
    (e.kind == Kind::Page ? c.first : c.second)++;
  }
  if (names.empty()) fail_data("manifest has no entries");
  for (const auto& [writer, c] : counts) {
    if (c.first == 0) fail_data("writer '" + writer + "' has no pages");
    if (c.second == 0) fail_data("writer '" + writer + "' has no words");
  }
  m.writers.assign(names.begin(), names.end());
  m.class_of.clear();
  for (std::size_t i = 0; i < m.writers.size(); ++i)
    m.class_of[m.writers[i]] = static_cast<int>(i);
}

// layout: root/<writer>/pages/*.png|*.pgm and root/<writer>/words/*.png|*.pgm;
// entries ordered lexicographically by relative path
inline DatasetManifest scan_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) fail_data("dataset root is not a directory: " + root);
  DatasetManifest m;
  m.root = root;
  std::vector<std::string> writers;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory()) writers.push_back(d.path().filename().string());
  std::sort(writers.begin(), writers.end());
  if (writers.empty()) fail_data("no writer directories under: " + root);
  for (const std::string& w : writers) {
    for (const char* sub : {"pages", "words"}) {
      const fs::path dir = fs::path(root) / w / sub;
      std::vector<std::string> files;
      if (fs::is_directory(dir))
        for (const auto& f : fs::directory_iterator(dir))
          if (f.is_regular_file() && detail::image_file(f.path()))
            files.push_back(f.path().filename().string());
      std::sort(files.begin(), files.end());
      const Kind kind = sub[0] == 'p' ? Kind::Page : Kind::Word;
      if (files.empty())
        fail_data("writer '" + w + "' has no " + sub);
      for (const std::string& f : files)
        m.entries.push_back({w, kind, w + "/" + std::string(sub) + "/" + f, -1});
    }
  }
  finalize_classes(m);
  return m;
}

inline void load_images(DatasetManifest& m) {
  namespace fs = std::filesystem;
  for (ManifestEntry& e : m.entries) {
    if (e.image >= 0) continue;
    e.image = static_cast<int>(m.images.size());
    m.images.push_back(load_gray((fs::path(m.root) / e.path).string()));
  }
}

// re-samples every loaded image to s x s (identity if already that size)
inline void resize_images(DatasetManifest& m, int s) {
  for (GrayImage& img : m.images)
    if (img.h != s || img.w != s) img = resize(img, s);
}

inline void write_manifest(const DatasetManifest& m, const std::string& path,
                           const std::vector<std::string>& config_lines = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail_data("cannot write manifest: " + path);
  for (const std::string& line : config_lines) f << "# " << line << "\n";
  f << "writer_id,kind,path\n";
  for (const ManifestEntry& e : m.entries)
    f << e.writer << "," << (e.kind == Kind::Page ? "page" : "word") << "," << e.path << "\n";
  if (!f) fail_data("short write: " + path);
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail_data("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "writer_id,kind,path") fail_data("manifest: bad header in " + path);
      header_seen = true;
      continue;
    }
    const std::size_t a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos)
      fail_data("manifest: malformed row in " + path + ": " + line);
    ManifestEntry e;
    e.writer = line.substr(0, a);
    const std::string kind = line.substr(a + 1, b - a - 1);
    if (kind == "page")
      e.kind = Kind::Page;
    else if (kind == "word")
      e.kind = Kind::Word;
    else
      fail_data("manifest: unknown kind '" + kind + "' in " + path);
    e.path = line.substr(b + 1);
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) fail_data("manifest: missing header in " + path);
  finalize_classes(m);
  return m;
}

// document key: filename stem up to the first '_' (page tiles and words cut
// from the same document share it)
inline std::string doc_key(const std::string& path) {
  const std::size_t slash = path.find_last_of('/');
  const std::size_t start = slash == std::string::npos ? 0 : slash + 1;
  std::size_t end = path.size();
  for (std::size_t i = start; i < path.size(); ++i)
    if (path[i] == '_' || path[i] == '.') {
      end = i;
      break;
    }
  return path.substr(start, end - start);
}

struct SplitView {
  std::vector<int> train, test;  // entry indices
};

// per-writer document holdout: the lexicographically last document that has
// both words and pages becomes test data when the writer has >= 2 word
// documents; writers without such a document stay entirely in train
inline SplitView make_split(const DatasetManifest& m) {
  std::map<std::string, std::set<std::string>> word_docs, page_docs;
  for (const ManifestEntry& e : m.entries)
    (e.kind == Kind::Word ? word_docs : page_docs)[e.writer].insert(doc_key(e.path));
  std::map<std::string, std::string> holdout;
  for (const auto& [writer, wd] : word_docs) {
    if (wd.size() < 2) continue;
    const std::set<std::string>& pd = page_docs[writer];
    std::string pick;
    for (const std::string& d : wd)
      if (pd.count(d)) pick = d;
    if (!pick.empty()) holdout[writer] = pick;
  }
  SplitView sv;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    auto it = holdout.find(e.writer);
    const bool test = it != holdout.end() && doc_key(e.path) == it->second;
    (test ? sv.test : sv.train).push_back(static_cast<int>(i));
  }
  return sv;
}

struct Pair {
  int word_entry;
  int page_entry;
  int label;
};

// pairs every word in the subset with a uniformly random same-writer page;
// the epoch stream shuffles words (each appears exactly once per epoch), the
// fixed stream keeps manifest order for deterministic evaluation
class PairSampler {
 public:
  PairSampler(const DatasetManifest& m, const std::vector<int>& subset, std::uint64_t seed)
      : m_(&m), seed_(seed), pages_by_class_(m.classes()) {
    for (int idx : subset) {
      const ManifestEntry& e = m.entries[static_cast<std::size_t>(idx)];
      if (e.kind == Kind::Page)
        pages_by_class_[static_cast<std::size_t>(m.class_id(e.writer))].push_back(idx);
      else
        words_.push_back(idx);
    }
    for (int wi : words_) {
      const ManifestEntry& e = m.entries[static_cast<std::size_t>(wi)];
      if (pages_by_class_[static_cast<std::size_t>(m.class_id(e.writer))].empty())
        fail_data("writer '" + e.writer + "' has words but no pages in this split");
    }
  }

  std::size_t size() const { return words_.size(); }

  std::vector<Pair> epoch(int epoch_idx) const {
    Rng r(derive_seed(derive_seed(seed_, detail::kEpochTag), static_cast<std::uint64_t>(epoch_idx)));
    std::vector<int> order = words_;
    r.shuffle(order);
    return assemble(order, r);
  }

  std::vector<Pair> fixed() const {
    Rng r(derive_seed(seed_, detail::kEvalTag));
    return assemble(words_, r);
  }

 private:
  std::vector<Pair> assemble(const std::vector<int>& order, Rng& r) const {
    std::vector<Pair> out;
    out.reserve(order.size());
    for (int wi : order) {
      const int cls = m_->class_id(m_->entries[static_cast<std::size_t>(wi)].writer);
      const auto& pages = pages_by_class_[static_cast<std::size_t>(cls)];
      out.push_back({wi, pages[r.below(pages.size())], cls});
    }
    return out;
  }

  const DatasetManifest* m_;
  std::uint64_t seed_;
  std::vector<int> words_;
  std::vector<std::vector<int>> pages_by_class_;
};

// stacks one side of a pair batch into an [n,1,s,s] input tensor
inline Tensor to_batch(const DatasetManifest& m, const std::vector<Pair>& pairs, std::size_t lo,
                       std::size_t n, bool page_side) {
  if (n == 0) fail("to_batch: empty batch");
  auto img_of = [&](const Pair& pr) -> const GrayImage& {
    const int entry = page_side ? pr.page_entry : pr.word_entry;
    const int idx = m.entries[static_cast<std::size_t>(entry)].image;
    if (idx < 0) fail_data("to_batch: image not loaded for " +
                           m.entries[static_cast<std::size_t>(entry)].path);
    return m.images[static_cast<std::size_t>(idx)];
  };
  const int s = img_of(pairs[lo]).h;
  Tensor t({static_cast<int>(n), 1, s, s});
  double* p = t.data();
  for (std::size_t i = 0; i < n; ++i) {
    const GrayImage& img = img_of(pairs[lo + i]);
    if (img.h != s || img.w != s) fail_data("to_batch: images are not a uniform square size");
    std::copy(img.px.begin(), img.px.end(), p + i * static_cast<std::size_t>(s) * s);
  }
  return t;
}

inline std::vector<int> batch_labels(const std::vector<Pair>& pairs, std::size_t lo,
                                     std::size_t n) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pairs[lo + i].label;
  return out;
}

// runs the full preprocessing pass over a loaded raw-image manifest: each
// page becomes 9 square tiles, each word is squared; everything lands at
// s x s; blank images are skipped and reported
inline DatasetManifest prep_manifest(const DatasetManifest& in, int s, std::uint64_t seed,
                                     double tau = 0.05,
                                     std::vector<std::string>* skipped = nullptr) {
  DatasetManifest out;
  out.root = in.root;
  for (const ManifestEntry& e : in.entries) {
    if (e.image < 0) fail_data("prep: images not loaded for " + e.path);
    const GrayImage& img = in.images[static_cast<std::size_t>(e.image)];
    const std::size_t dot = e.path.find_last_of('.');
    const std::string stem = e.path.substr(0, dot);
    try {
      if (e.kind == Kind::Page) {
        Rng r(derive_seed(seed, detail::kPrepTag ^ detail::fnv1a64(e.path)));
        std::array<GrayImage, 9> tiles = prep_page(img, s, r, tau);
        for (int j = 0; j < 9; ++j) {
          out.entries.push_back(
              {e.writer, Kind::Page, stem + "_t" + std::to_string(j) + ".png",
               static_cast<int>(out.images.size())});
          out.images.push_back(std::move(tiles[static_cast<std::size_t>(j)]));
        }
      } else {
        GrayImage w = prep_word(img, s, tau);
        out.entries.push_back({e.writer, Kind::Word, stem + ".png",
                               static_cast<int>(out.images.size())});
        out.images.push_back(std::move(w));
      }
    } catch (const DataError&) {
      if (skipped) skipped->push_back(e.path);
    }
  }
  finalize_classes(out);
  return out;
}

// writes a manifest's in-memory images into the standard directory layout
inline void save_corpus(const DatasetManifest& m, const std::string& out_root) {
  namespace fs = std::filesystem;
  for (const ManifestEntry& e : m.entries) {
    if (e.image < 0) fail_data("save_corpus: missing image for " + e.path);
    const fs::path dst = fs::path(out_root) / e.path;
    fs::create_directories(dst.parent_path());
    save_gray(m.images[static_cast<std::size_t>(e.image)], dst.string());
  }
}

struct WriterStyle {
  int thickness;   // stroke diameter, px
  int slant_deg;   // shear angle of the mostly-vertical strokes
  int spacing;     // gap between words on a page, px
  int jitter;      // per-word baseline wobble, px
  double xheight;  // letter mid-zone height, fraction of the writable band
  double width;    // letter advance, relative to the nominal letter slot
  double bow;      // stroke curvature: perpendicular arc offset per unit length
};

struct SyntheticCorpusSpec {
  int num_writers = 8;
  int pages_per_writer = 4;
  int words_per_writer = 20;
  int image_size = 256;  // page canvas side; word canvases scale from it
  std::uint64_t seed = 0;
};

// style grid: 4 thicknesses x 9 slants = 36 combos; any two differ by at
// least 1 px of thickness or 5 degrees of slant. Letter geometry (mid-zone
// height, advance, curvature) is drawn continuously per writer on top of the
// grid floor.
inline std::vector<WriterStyle> synthetic_styles(const SyntheticCorpusSpec& spec) {
  if (spec.num_writers < 1) fail_data("synthetic corpus needs at least one writer");
  if (spec.num_writers > 36) fail_data("synthetic corpus supports at most 36 writers");
  std::vector<WriterStyle> grid;
  for (int t = 1; t <= 4; ++t)
    for (int sl = -20; sl <= 20; sl += 5) grid.push_back({t, sl, 0, 0, 0.0, 0.0, 0.0});
  Rng r(derive_seed(spec.seed, detail::kStyleTag));
  r.shuffle(grid);
  grid.resize(static_cast<std::size_t>(spec.num_writers));
  for (WriterStyle& st : grid) {
    st.spacing = 6 + static_cast<int>(r.below(9));
    st.jitter = static_cast<int>(r.below(4));
    st.xheight = 0.36 + 0.26 * r.uniform();
    st.width = 0.75 + 0.50 * r.uniform();
    st.bow = -0.22 + 0.44 * r.uniform();
  }
  return grid;
}

namespace detail {

inline void stamp(GrayImage& img, double y, double x, double rad) {
  const int r0 = std::max(0, static_cast<int>(std::floor(y - rad)));
  const int r1 = std::min(img.h - 1, static_cast<int>(std::ceil(y + rad)));
  const int c0 = std::max(0, static_cast<int>(std::floor(x - rad)));
  const int c1 = std::min(img.w - 1, static_cast<int>(std::ceil(x + rad)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double dy = r - y, dx = c - x;
      if (dy * dy + dx * dx <= rad * rad) img.at(r, c) = 1.0;
    }
}

inline void draw_segment(GrayImage& img, double y0, double x0, double y1, double x1,
                         int thickness) {
  const double rad = std::max(0.5, thickness * 0.5);
  const double len = std::hypot(y1 - y0, x1 - x0);
  const int steps = std::max(1, static_cast<int>(len / 0.3));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    stamp(img, y0 + t * (y1 - y0), x0 + t * (x1 - x0), rad);
  }
}

// quadratic arc between two points; `bow` offsets the control point
// perpendicular to the chord, as a fraction of the chord length
inline void draw_arc(GrayImage& img, double y0, double x0, double y1, double x1, double bow,
                     int thickness) {
  const double rad = std::max(0.5, thickness * 0.5);
  const double len = std::hypot(y1 - y0, x1 - x0);
  if (len < 1e-9) {
    stamp(img, y0, x0, rad);
    return;
  }
  const double ny = -(x1 - x0) / len, nx = (y1 - y0) / len;
  const double cy = 0.5 * (y0 + y1) + bow * len * ny;
  const double cx = 0.5 * (x0 + x1) + bow * len * nx;
  const int steps = std::max(2, static_cast<int>(len / 0.25));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps, u = 1.0 - t;
    stamp(img, u * u * y0 + 2 * u * t * cy + t * t * y1,
          u * u * x0 + 2 * u * t * cx + t * t * x1, rad);
  }
}

// Draws a pseudo-word: a row of letter-like arcs sharing one baseline. The
// writer's style fixes stroke thickness, slant, mid-zone height, letter
// advance, and curvature; the rng picks letter archetypes and point jitter,
// so two words by one writer share style but never content.
inline void render_word_into(GrayImage& img, const WriterStyle& st, Rng& r) {
  const double m = st.thickness + 2.0;
  if (img.h <= 2 * m + 2 || img.w <= 2 * m + 2) fail_data("synthetic word canvas too small");
  const double shear = std::tan(st.slant_deg * 3.14159265358979323846 / 180.0);
  const double band = img.h - 2 * m;                       // writable vertical extent
  const double base = m + 0.80 * band;                     // common baseline
  const double xh = std::max(2.0, st.xheight * band);      // mid-zone height
  const double asc = std::min(0.78 * band, 1.55 * xh);     // ascender height
  const double slot = st.width * std::max(5.0, 0.42 * band);  // letter advance
  auto jit = [&](double s) { return (r.uniform() - 0.5) * s; };
  // shear in screen space: x shifts with height above the baseline
  auto sx = [&](double x, double y) {
    return std::clamp(x + shear * (base - y), 1.0, img.w - 2.0);
  };
  for (double x = m + 0.6 * slot; x + 0.45 * slot <= img.w - m; x += slot) {
    const double jx = x + jit(0.20 * slot), jy = jit(0.12 * xh);
    const double top = base - xh + jy, tall = base - asc + jy;
    const double w2 = 0.38 * slot;
    switch (static_cast<int>(r.below(4))) {
      case 0:  // tall stem, as in 'l'
        draw_arc(img, tall, sx(jx, tall), base, sx(jx, base), st.bow, st.thickness);
        break;
      case 1:  // arch, as in 'n'
        draw_arc(img, base, sx(jx - w2, base), top, sx(jx, top), st.bow, st.thickness);
        draw_arc(img, top, sx(jx, top), base, sx(jx + w2, base), st.bow, st.thickness);
        break;
      case 2:  // cup, as in 'u'
        draw_arc(img, top, sx(jx - w2, top), base, sx(jx, base), st.bow, st.thickness);
        draw_arc(img, base, sx(jx, base), top, sx(jx + w2, top), st.bow, st.thickness);
        break;
      default:  // closed bowl, as in 'o': two opposite arcs over one chord
        draw_arc(img, top, sx(jx, top), base, sx(jx, base), 0.30 + st.bow, st.thickness);
        draw_arc(img, top, sx(jx, top), base, sx(jx, base), -0.30 + st.bow, st.thickness);
        break;
    }
  }
  // faint sub-threshold paper speckle
  const int n = img.h * img.w / 300;
  for (int i = 0; i < n; ++i) {
    const int rr = static_cast<int>(r.below(static_cast<std::uint64_t>(img.h)));
    const int cc = static_cast<int>(r.below(static_cast<std::uint64_t>(img.w)));
    img.at(rr, cc) = std::max(img.at(rr, cc), 0.01 + 0.03 * r.uniform());
  }
}

inline GrayImage render_page(const WriterStyle& st, Rng& r, int size) {
  GrayImage page(size, size);
  const int margin = size / 16;
  const int wh = size / 8, ww = wh * 3 / 2;
  for (int y = margin; y + wh + st.jitter <= size - margin; y += wh + st.spacing) {
    for (int x = margin; x + ww <= size - margin; x += ww + st.spacing) {
      GrayImage word(wh, ww);
      render_word_into(word, st, r);
      const int jit = static_cast<int>(r.below(static_cast<std::uint64_t>(st.jitter) + 1));
      for (int rr = 0; rr < wh; ++rr)
        for (int cc = 0; cc < ww; ++cc) {
          double& dst = page.at(y + jit + rr, x + cc);
          dst = std::max(dst, word.at(rr, cc));
        }
    }
  }
  return page;
}

}  // namespace detail

// deterministic in-memory corpus; words are assigned round-robin to the
// writer's documents by name so the document split has test words
inline DatasetManifest generate_synthetic(const SyntheticCorpusSpec& spec) {
  if (spec.pages_per_writer < 1 || spec.words_per_writer < 1)
    fail_data("synthetic corpus needs at least one page and one word per writer");
  // pages carve word boxes size/8 tall; the thickest pen style needs 15 px
  if (spec.image_size < 128) fail_data("synthetic page size must be >= 128");
  const std::vector<WriterStyle> styles = synthetic_styles(spec);
  const int word_h = std::max(24, spec.image_size / 4);
  const int word_w = word_h * 3 / 2;
  DatasetManifest m;
  for (int wi = 0; wi < spec.num_writers; ++wi) {
    char wname[16];
    std::snprintf(wname, sizeof wname, "w%02d", wi);
    const std::string writer = wname;
    const std::uint64_t wseed = derive_seed(spec.seed, detail::fnv1a64(writer));
    for (int p = 0; p < spec.pages_per_writer; ++p) {
      Rng r(derive_seed(wseed, detail::kPageTag + static_cast<std::uint64_t>(p)));
      m.entries.push_back({writer, Kind::Page, writer + "/pages/d" + std::to_string(p) + ".png",
                           static_cast<int>(m.images.size())});
      m.images.push_back(detail::render_page(styles[static_cast<std::size_t>(wi)], r,
                                             spec.image_size));
    }
    for (int i = 0; i < spec.words_per_writer; ++i) {
      Rng r(derive_seed(wseed, detail::kWordTag + static_cast<std::uint64_t>(i)));
      const int doc = i % spec.pages_per_writer;
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "d%d_w%03d.png", doc, i);
      GrayImage word(word_h, word_w);
      detail::render_word_into(word, styles[static_cast<std::size_t>(wi)], r);
      m.entries.push_back(
          {writer, Kind::Word, writer + "/words/" + suffix, static_cast<int>(m.images.size())});
      m.images.push_back(std::move(word));
    }
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
  finalize_classes(m);
  return m;
}

}  // namespace grn
