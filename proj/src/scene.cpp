#include "epg/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "epg/error.hpp"
#include "epg/rng.hpp"

namespace epg {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Vehicle: return "vehicle";
    case Category::Pedestrian: return "pedestrian";
    case Category::Bicyclist: return "bicyclist";
    case Category::Others: return "others";
  }
  return "unknown";
}

Category parse_category(std::string_view name) {
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    if (category_name(static_cast<Category>(c)) == name) return static_cast<Category>(c);
  throw FormatError("unknown category '" + std::string(name) + "'");
}

std::optional<Category> category_from_apollo_code(int code) {
  switch (code) {
    case 1:
    case 2: return Category::Vehicle;
    case 3: return Category::Pedestrian;
    case 4: return Category::Bicyclist;
    case 5: return Category::Others;
    default: return std::nullopt;
  }
}

namespace {

int apollo_code(Category c) {
  switch (c) {
    case Category::Vehicle: return 1;
    case Category::Pedestrian: return 3;
    case Category::Bicyclist: return 4;
    case Category::Others: return 5;
  }
  return 5;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto sep = [](char ch) { return ch == ' ' || ch == '\t' || ch == ',' || ch == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && sep(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !sep(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::optional<double> to_double(std::string_view f) {
  double v = 0.0;
  const auto* end = f.data() + f.size();
  auto [ptr, ec] = std::from_chars(f.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::int64_t> to_integer(std::string_view f) {
  const auto v = to_double(f);
  if (!v || *v != std::floor(*v) || std::abs(*v) > 9.0e15) return std::nullopt;
  return static_cast<std::int64_t>(*v);
}

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const TrackState* AgentTrack::at_frame(std::int64_t frame) const {
  auto it = std::lower_bound(states.begin(), states.end(), frame,
                             [](const TrackState& s, std::int64_t f) { return s.frame < f; });
  return (it != states.end() && it->frame == frame) ? &*it : nullptr;
}

Recording parse_trajectory_table(std::istream& in, TableFormat format, std::string name) {
  Recording rec;
  rec.name = std::move(name);
  const bool ngsim = format == TableFormat::NgsimLike;
  rec.frame_rate = ngsim ? 5.0 : 2.0;
  rec.frame_step = ngsim ? 2 : 1;

  std::map<std::int64_t, AgentTrack> tracks;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_fields(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    if (fields.size() < 5)
      throw ParseError(rec.name, lineno, "expected at least 5 fields, got " +
                                             std::to_string(fields.size()));
    std::optional<std::int64_t> frame, agent;
    std::optional<double> x, y;
    TrackState st;
    Category cat = Category::Vehicle;
    if (ngsim) {
      agent = to_integer(fields[0]);
      frame = to_integer(fields[1]);
      x = to_double(fields[2]);
      y = to_double(fields[3]);
      const auto lane = to_integer(fields[4]);
      if (!lane) throw ParseError(rec.name, lineno, "bad lane id '" + std::string(fields[4]) + "'");
      st.lane = static_cast<int>(*lane);
    } else {
      frame = to_integer(fields[0]);
      agent = to_integer(fields[1]);
      const auto code = to_integer(fields[2]);
      const auto c = code ? category_from_apollo_code(static_cast<int>(*code)) : std::nullopt;
      if (!c) throw ParseError(rec.name, lineno, "bad type code '" + std::string(fields[2]) + "'");
      cat = *c;
      x = to_double(fields[3]);
      y = to_double(fields[4]);
    }
    if (!frame) throw ParseError(rec.name, lineno, "bad frame id");
    if (!agent) throw ParseError(rec.name, lineno, "bad agent id");
    if (!x || !y) throw ParseError(rec.name, lineno, "bad coordinate");
    st.frame = *frame;
    st.position = ngsim ? Vec2{*x * kFeetToMeters, *y * kFeetToMeters} : Vec2{*x, *y};

    auto [it, inserted] = tracks.try_emplace(*agent);
    AgentTrack& tr = it->second;
    if (inserted) {
      tr.agent_id = *agent;
      tr.category = cat;
    }
    if (!tr.states.empty()) {
      const auto last = tr.states.back().frame;
      if (st.frame == last)
        throw DataError(rec.name + ":" + std::to_string(lineno) + ": duplicate row for agent " +
                        std::to_string(*agent) + " frame " + std::to_string(st.frame));
      if (st.frame < last)
        throw DataError(rec.name + ":" + std::to_string(lineno) + ": frame " +
                        std::to_string(st.frame) + " of agent " + std::to_string(*agent) +
                        " follows frame " + std::to_string(last));
    }
    tr.states.push_back(st);
  }

  for (auto& [id, tr] : tracks) {
    if (ngsim) {
      std::erase_if(tr.states, [&](const TrackState& s) { return s.frame % rec.frame_step != 0; });
      if (tr.states.empty()) continue;
    }
    rec.tracks.push_back(std::move(tr));
  }
  return rec;
}

Recording load_trajectory_table(const std::filesystem::path& path, TableFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_trajectory_table(in, format, path.filename().string());
}

DatasetConfig DatasetConfig::apollo() { return DatasetConfig{}; }

DatasetConfig DatasetConfig::ngsim() {
  DatasetConfig c;
  c.obs_points = 15;   // 3 s at 5 Hz
  c.pred_frames = 25;  // 5 s at 5 Hz
  c.neighborhood = Neighborhood::HighwayBand;
  return c;
}

void DatasetConfig::validate() const {
  if (obs_points < 2) throw UsageError("obs_points must be >= 2");
  if (pred_frames < 1) throw UsageError("pred_frames must be >= 1");
  if (!(distance_threshold > 0.0) || !(beta_degrees > 0.0) || !(scope_radius > 0.0) ||
      !(band_longitudinal > 0.0) || band_lanes < 0)
    throw UsageError("dataset thresholds must be positive");
}

bool Sample::fully_observed_future(std::size_t i) const {
  for (std::size_t t = 0; t < pred_frames; ++t)
    if (!fut_present(i, t)) return false;
  return true;
}

bool Sample::is_supervised(std::size_t i) const {
  return i > 0 && i < agent_count() && categories[i] != Category::Others &&
         obs_present(i, last_obs()) && fully_observed_future(i);
}

void validate_sample(const Sample& s) {
  const std::size_t n = s.agent_count();
  auto fail = [&](const std::string& w) {
    throw DataError("sample " + s.recording + "@" + std::to_string(s.window_start) + ": " + w);
  };
  if (n == 0) fail("no agents");
  if (s.obs_points < 2) fail("needs at least 2 observed points");
  if (s.pred_frames < 1) fail("needs at least 1 future frame");
  if (s.agent_ids.size() != n || s.observed.size() != n * s.obs_points ||
      s.future.size() != n * s.pred_frames || s.obs_mask.size() != n * s.obs_points ||
      s.fut_mask.size() != n * s.pred_frames || s.plan.size() != s.pred_frames)
    fail("array sizes disagree with agent count");
  for (std::size_t t = 0; t < s.obs_points; ++t)
    if (!s.obs_present(0, t)) fail("ego not fully observed");
  auto finite = [](Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); };
  for (const auto& v : s.observed)
    if (!finite(v)) fail("non-finite observed coordinate");
  for (const auto& v : s.future)
    if (!finite(v)) fail("non-finite future coordinate");
  for (const auto& v : s.plan)
    if (!finite(v)) fail("non-finite plan coordinate");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < s.obs_points; ++t)
      if (!s.obs_present(i, t) && !(s.obs(i, t) == Vec2{})) fail("masked observation not zero");
    for (std::size_t t = 0; t < s.pred_frames; ++t)
      if (!s.fut_present(i, t) && !(s.fut(i, t) == Vec2{})) fail("masked future not zero");
  }
}

bool admits_neighbor(const DatasetConfig& config, const TrackState& ego, const TrackState& other) {
  if (config.neighborhood == Neighborhood::Radius)
    return norm(other.position - ego.position) <= config.scope_radius;
  return std::abs(other.position.y - ego.position.y) <= config.band_longitudinal &&
         std::abs(other.lane - ego.lane) <= config.band_lanes;
}

std::vector<Sample> window_samples(const Recording& rec, const DatasetConfig& config,
                                   EgoSelection selection, std::optional<std::int64_t> ego_id) {
  config.validate();
  if (selection == EgoSelection::GivenId && !ego_id)
    throw UsageError("ego selection by id needs an agent id");
  std::vector<Sample> out;
  if (rec.tracks.empty()) return out;

  std::int64_t first = rec.tracks.front().states.front().frame;
  std::int64_t last = first;
  for (const auto& tr : rec.tracks) {
    first = std::min(first, tr.states.front().frame);
    last = std::max(last, tr.states.back().frame);
  }
  const std::int64_t step = rec.frame_step;
  const auto obs = static_cast<std::int64_t>(config.obs_points);
  const auto pred = static_cast<std::int64_t>(config.pred_frames);
  const std::int64_t span = (obs + pred - 1) * step;
  const std::int64_t stride = static_cast<std::int64_t>(config.stride()) * step;

  for (std::int64_t start = first; start + span <= last; start += stride) {
    const std::int64_t last_obs_frame = start + (obs - 1) * step;
    for (const auto& ego : rec.tracks) {
      if (selection == EgoSelection::GivenId && ego.agent_id != *ego_id) continue;
      bool complete = true;
      for (std::int64_t k = 0; k < obs + pred && complete; ++k)
        complete = ego.at_frame(start + k * step) != nullptr;
      if (!complete) continue;

      const TrackState* ego_now = ego.at_frame(last_obs_frame);
      std::vector<const AgentTrack*> members{&ego};
      for (const auto& other : rec.tracks) {
        if (&other == &ego) continue;
        const TrackState* now = other.at_frame(last_obs_frame);
        if (now && admits_neighbor(config, *ego_now, *now)) members.push_back(&other);
      }

      Sample s;
      s.recording = rec.name;
      s.window_start = start;
      s.frame_rate = rec.frame_rate;
      s.obs_points = config.obs_points;
      s.pred_frames = config.pred_frames;
      const std::size_t n = members.size();
      s.observed.assign(n * config.obs_points, Vec2{});
      s.future.assign(n * config.pred_frames, Vec2{});
      s.obs_mask.assign(n * config.obs_points, 0);
      s.fut_mask.assign(n * config.pred_frames, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const AgentTrack& tr = *members[i];
        s.agent_ids.push_back(tr.agent_id);
        s.categories.push_back(tr.category);
        for (std::int64_t k = 0; k < obs; ++k)
          if (const auto* st = tr.at_frame(start + k * step)) {
            s.obs(i, static_cast<std::size_t>(k)) = st->position;
            s.obs_mask[i * config.obs_points + static_cast<std::size_t>(k)] = 1;
          }
        for (std::int64_t k = 0; k < pred; ++k)
          if (const auto* st = tr.at_frame(start + (obs + k) * step)) {
            s.fut(i, static_cast<std::size_t>(k)) = st->position;
            s.fut_mask[i * config.pred_frames + static_cast<std::size_t>(k)] = 1;
          }
      }
      s.plan.assign(s.future.begin(), s.future.begin() + static_cast<std::ptrdiff_t>(s.pred_frames));
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {
Sample shift(const Sample& in, Vec2 delta) {
  Sample s = in;
  for (std::size_t i = 0; i < s.agent_count(); ++i) {
    for (std::size_t t = 0; t < s.obs_points; ++t)
      if (s.obs_present(i, t)) s.obs(i, t) = s.obs(i, t) + delta;
    for (std::size_t t = 0; t < s.pred_frames; ++t)
      if (s.fut_present(i, t)) s.fut(i, t) = s.fut(i, t) + delta;
  }
  for (auto& p : s.plan) p = p + delta;
  return s;
}
}  // namespace

Sample ego_center(const Sample& in) {
  const Vec2 anchor = in.obs(0, in.last_obs());
  Sample s = shift(in, Vec2{} - anchor);
  s.origin = in.origin + anchor;
  return s;
}

Sample ego_uncenter(const Sample& in) {
  Sample s = shift(in, in.origin);
  s.origin = Vec2{};
  return s;
}

// ---- canonical format -----------------------------------------------------

void write_canonical(const std::vector<Sample>& samples, std::ostream& out) {
  auto vec = [](std::ostream& os, Vec2 v) { os << '[' << fmt17(v.x) << ',' << fmt17(v.y) << ']'; };
  for (const auto& s : samples) {
    validate_sample(s);
    const std::size_t n = s.agent_count();
    out << "{\"version\":" << nlohmann::json(std::string(kCanonicalVersion)).dump()
        << ",\"recording\":" << nlohmann::json(s.recording).dump()
        << ",\"window_start\":" << s.window_start << ",\"frame_rate\":" << fmt17(s.frame_rate)
        << ",\"obs_points\":" << s.obs_points << ",\"pred_frames\":" << s.pred_frames
        << ",\"agent_ids\":[";
    for (std::size_t i = 0; i < n; ++i) out << (i ? "," : "") << s.agent_ids[i];
    out << "],\"categories\":[";
    for (std::size_t i = 0; i < n; ++i)
      out << (i ? "," : "") << '"' << category_name(s.categories[i]) << '"';
    out << "],\"origin\":";
    vec(out, s.origin);
    auto grid = [&](const char* key, std::size_t frames, auto get) {
      out << ",\"" << key << "\":[";
      for (std::size_t i = 0; i < n; ++i) {
        out << (i ? ",[" : "[");
        for (std::size_t t = 0; t < frames; ++t) {
          if (t) out << ',';
          get(i, t);
        }
        out << ']';
      }
      out << ']';
    };
    grid("obs", s.obs_points, [&](std::size_t i, std::size_t t) { vec(out, s.obs(i, t)); });
    grid("fut", s.pred_frames, [&](std::size_t i, std::size_t t) { vec(out, s.fut(i, t)); });
    out << ",\"plan\":[";
    for (std::size_t t = 0; t < s.pred_frames; ++t) {
      if (t) out << ',';
      vec(out, s.plan[t]);
    }
    out << ']';
    grid("obs_mask", s.obs_points,
         [&](std::size_t i, std::size_t t) { out << int(s.obs_mask[i * s.obs_points + t]); });
    grid("fut_mask", s.pred_frames,
         [&](std::size_t i, std::size_t t) { out << int(s.fut_mask[i * s.pred_frames + t]); });
    out << "}\n";
  }
}

std::vector<Sample> read_canonical(std::istream& in) {
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto version = j.at("version").get<std::string>();
      if (version != kCanonicalVersion)
        throw FormatError("line " + std::to_string(lineno) + ": version '" + version +
                          "', expected '" + std::string(kCanonicalVersion) + "'");
      Sample s;
      s.recording = j.at("recording").get<std::string>();
      s.window_start = j.at("window_start").get<std::int64_t>();
      s.frame_rate = j.at("frame_rate").get<double>();
      s.obs_points = j.at("obs_points").get<std::size_t>();
      s.pred_frames = j.at("pred_frames").get<std::size_t>();
      s.agent_ids = j.at("agent_ids").get<std::vector<std::int64_t>>();
      for (const auto& c : j.at("categories")) s.categories.push_back(parse_category(c.get<std::string>()));
      auto vec = [](const nlohmann::json& v) {
        if (!v.is_array() || v.size() != 2) throw FormatError("coordinate is not a pair");
        return Vec2{v[0].get<double>(), v[1].get<double>()};
      };
      s.origin = vec(j.at("origin"));
      for (const auto& row : j.at("obs"))
        for (const auto& v : row) s.observed.push_back(vec(v));
      for (const auto& row : j.at("fut"))
        for (const auto& v : row) s.future.push_back(vec(v));
      for (const auto& v : j.at("plan")) s.plan.push_back(vec(v));
      for (const auto& row : j.at("obs_mask"))
        for (const auto& v : row) s.obs_mask.push_back(static_cast<std::uint8_t>(v.get<int>() != 0));
      for (const auto& row : j.at("fut_mask"))
        for (const auto& v : row) s.fut_mask.push_back(static_cast<std::uint8_t>(v.get<int>() != 0));
      validate_sample(s);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_canonical(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_canonical(samples, out);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Sample> read_canonical(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_canonical(in);
}

// ---- synthetic scenes -----------------------------------------------------

std::vector<Recording> synthetic_recordings(const SyntheticOptions& opts) {
  struct Script {
    Category category;
    double speed_lo, speed_hi;  // m/frame
  };
  static constexpr Script kScripts[] = {
      {Category::Vehicle, 1.5, 2.5},    {Category::Vehicle, 1.2, 2.2},
      {Category::Pedestrian, 0.3, 0.7}, {Category::Bicyclist, 0.8, 1.4},
      {Category::Others, 0.0, 0.2},
  };
  const std::size_t frames = opts.obs_points + opts.pred_frames;
  std::vector<Recording> out;
  for (std::size_t s = 0; s < opts.scenes; ++s) {
    Rng rng(opts.seed * 0x9E3779B97F4A7C15ull + s);
    Recording rec;
    rec.name = "synthetic-" + std::to_string(s);
    rec.frame_rate = opts.frame_rate;
    const double ego_heading = uniform(rng, -std::numbers::pi, std::numbers::pi);
    for (std::size_t a = 0; a < std::size(kScripts); ++a) {
      const Script& sc = kScripts[a];
      Vec2 pos{uniform(rng, -50.0, 50.0), uniform(rng, -50.0, 50.0)};
      double heading = ego_heading;
      Vec2 anchor = pos;  // where the agent sits at the last observed frame
      if (a > 0) {
        const double bearing = ego_heading + uniform(rng, -std::numbers::pi, std::numbers::pi);
        const double range = uniform(rng, 4.0, 12.0);
        anchor = rec.tracks[0].states[opts.obs_points - 1].position +
                 range * Vec2{std::cos(bearing), std::sin(bearing)};
        heading = sc.category == Category::Vehicle
                      ? ego_heading + uniform(rng, -0.3, 0.3)
                      : uniform(rng, -std::numbers::pi, std::numbers::pi);
      }
      const double speed = uniform(rng, sc.speed_lo, sc.speed_hi);
      const double turn = uniform(rng, -0.04, 0.04);
      AgentTrack tr;
      tr.agent_id = static_cast<std::int64_t>(a);
      tr.category = sc.category;
      for (std::size_t f = 0; f < frames; ++f) {
        tr.states.push_back({static_cast<std::int64_t>(f), pos, -1});
        pos = pos + speed * Vec2{std::cos(heading), std::sin(heading)};
        heading += turn;
      }
      if (a > 0) {
        const Vec2 delta = anchor - tr.states[opts.obs_points - 1].position;
        for (auto& st : tr.states) st.position = st.position + delta;
      }
      rec.tracks.push_back(std::move(tr));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Sample> synthetic_samples(const SyntheticOptions& opts) {
  DatasetConfig cfg;
  cfg.obs_points = opts.obs_points;
  cfg.pred_frames = opts.pred_frames;
  std::vector<Sample> out;
  for (const auto& rec : synthetic_recordings(opts))
    for (auto& s : window_samples(rec, cfg, EgoSelection::GivenId, 0))
      out.push_back(ego_center(s));
  return out;
}

void write_apollo_table(const Recording& rec, std::ostream& out) {
  std::vector<std::tuple<std::int64_t, std::int64_t, int, Vec2>> rows;
  for (const auto& tr : rec.tracks)
    for (const auto& st : tr.states)
      rows.emplace_back(st.frame, tr.agent_id, apollo_code(tr.category), st.position);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  for (const auto& [f, id, code, p] : rows)
    out << f << ' ' << id << ' ' << code << ' ' << fmt17(p.x) << ' ' << fmt17(p.y) << '\n';
}

}  // namespace epg
