#include "cli/run_config.hpp"

#include <cmath>
#include <cstdio>

#include "common/error.hpp"

namespace cvtnet::cli {

using nlohmann::json;

RowSelection parse_rows(const std::string& name) {
  if (name == "all") return RowSelection::All;
  if (name == "train") return RowSelection::Train;
  if (name == "validation") return RowSelection::Validation;
  fail(ErrorCode::Config, "row selection must be one of all, train, validation (got '" + name + "')");
}

const char* rows_name(RowSelection rows) {
  switch (rows) {
    case RowSelection::All: return "all";
    case RowSelection::Train: return "train";
    case RowSelection::Validation: return "validation";
  }
  return "all";
}

namespace {

const char* split_name(views::SplitKind k) { return k == views::SplitKind::Range ? "range" : "height"; }

views::SplitKind parse_split(const std::string& s) {
  if (s == "range") return views::SplitKind::Range;
  if (s == "height") return views::SplitKind::Height;
  fail(ErrorCode::Config, "interval kind must be 'range' or 'height' (got '" + s + "')");
}

json encode_model(const mvf::ModelConfig& m) {
  const auto& p = m.projection;
  json proj = {{"width", p.width},
               {"height", p.height},
               {"fov_up_deg", p.fov_up_deg},
               {"fov_down_deg", p.fov_down_deg},
               {"max_range", p.max_range},
               {"riv_intervals", {{"boundaries", p.riv_intervals.boundaries}, {"kind", split_name(p.riv_intervals.kind)}}},
               {"bev_intervals", {{"boundaries", p.bev_intervals.boundaries}, {"kind", split_name(p.bev_intervals.kind)}}},
               {"bev_value", p.bev_value == views::BevValue::Occupancy ? "occupancy" : "planar_range"}};
  const auto& e = m.encoder;
  json leg = json::array();
  for (const auto& s : e.leg) leg.push_back({s.kernel, s.stride, s.channels});
  json enc = {{"d_model", e.d_model},   {"n_head", e.n_head}, {"d_ffn", e.d_ffn},
              {"intra_blocks", e.intra_blocks}, {"leg", leg},
              {"leg_norm", e.leg_norm == afe::LegNorm::Layer ? "layer" : "none"}};
  const auto& v = m.fusion.netvlad;
  json fus = {{"cross_blocks", m.fusion.cross_blocks},
              {"netvlad",
               {{"d_inter", v.d_inter},
                {"clusters", v.clusters},
                {"d_hidden", v.d_hidden},
                {"d_output", v.d_output},
                {"assign_alpha", v.assign_alpha}}}};
  return {{"projection", proj}, {"encoder", enc}, {"fusion", fus}};
}

json encode_world(const scan::WorldConfig& w) {
  json revisits = json::array();
  for (const auto& r : w.revisits) {
    revisits.push_back({{"source", r.source}, {"dx", r.dx}, {"dy", r.dy}, {"yaw_offset", r.yaw_offset}});
  }
  return {{"num_scans", w.num_scans},
          {"num_revisits", w.num_revisits},
          {"reverse_every", w.reverse_every},
          {"revisits", revisits},
          {"step", w.step},
          {"heading_jitter_deg", w.heading_jitter_deg},
          {"revisit_offset", w.revisit_offset},
          {"landmark_density", w.landmark_density},
          {"wall_fraction", w.wall_fraction},
          {"terrain_relief", w.terrain_relief},
          {"range_noise", w.range_noise},
          {"sensor_height", w.sensor_height},
          {"beam_rows", w.beam_rows},
          {"beam_columns", w.beam_columns},
          {"bounds",
           {{"fov_up_deg", w.bounds.fov_up_deg},
            {"fov_down_deg", w.bounds.fov_down_deg},
            {"max_range", w.bounds.max_range}}}};
}

json encode_training(const train::TrainConfig& t) {
  return {{"k_pos", t.k_pos},
          {"k_neg", t.k_neg},
          {"alpha", t.alpha},
          {"overlap_threshold", t.overlap_threshold},
          {"learning_rate", t.learning_rate},
          {"epochs", t.epochs},
          {"validation_fraction", t.validation_fraction},
          {"yaw_augment", t.yaw_augment},
          {"batch_tuples", t.batch_tuples},
          {"grad_clip", t.grad_clip},
          {"overlap",
           {{"width", t.overlap.width},
            {"height", t.overlap.height},
            {"range_gate", t.overlap.range_gate},
            {"pair_radius_factor", t.overlap.pair_radius_factor}}}};
}

template <typename T>
T get(const json& j, const char* key) {
  return j.at(key).get<T>();
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

}  // namespace

json default_tree(const std::string& preset) {
  json t = encode_model(mvf::ModelConfig::preset(preset));
  t["preset"] = preset;
  t["seed"] = std::uint64_t{1};
  t["world"] = encode_world(scan::WorldConfig{});
  t["training"] = encode_training(train::TrainConfig{});
  const EvalSettings ev;
  t["evaluation"] = {{"recall_at", ev.metrics.recall_at},
                     {"keep", ev.metrics.keep},
                     {"positive", ev.positive},
                     {"overlap_threshold", ev.overlap_threshold},
                     {"distance_threshold", ev.distance_threshold},
                     {"query_rows", rows_name(ev.query_rows)}};
  const BenchSettings b;
  t["bench"] = {{"database_rows", b.database_rows}, {"repetitions", b.repetitions}, {"top_k", b.top_k}};
  t["describe"] = {{"rows", "all"}};
  t["index"] = {{"rows", "train"}};
  t["query"] = {{"k", std::size_t{20}}};
  t["paths"] = {{"out", ""}, {"dataset", ""}, {"checkpoint", ""}, {"descriptors", ""}, {"index", ""}, {"queries", ""}};
  return t;
}

void merge_strict(json& base, const json& overlay, const std::string& path) {
  require(overlay.is_object(), ErrorCode::Config,
          "config" + (path.empty() ? std::string() : " section '" + path + "'") + " must be a JSON object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) fail(ErrorCode::Config, "unknown config key '" + key + "'");
    json& slot = base[it.key()];
    const json& value = it.value();
    if (slot.is_object()) {
      merge_strict(slot, value, key);
      continue;
    }
    if (!same_kind(slot, value)) {
      fail(ErrorCode::Config, "config key '" + key + "' expects " + slot.type_name() + ", got " + value.type_name());
    }
    const bool integral_slot = slot.is_number_integer();
    if (integral_slot && value.is_number_float()) {
      const double d = value.get<double>();
      require(std::floor(d) == d, ErrorCode::Config, "config key '" + key + "' expects an integer");
      require(!(slot.is_number_unsigned() && d < 0), ErrorCode::Config, "config key '" + key + "' must be non-negative");
      slot = static_cast<std::int64_t>(d);
      continue;
    }
    if (integral_slot && value.is_number_integer() && slot.is_number_unsigned() && value.get<std::int64_t>() < 0) {
      fail(ErrorCode::Config, "config key '" + key + "' must be non-negative");
    }
    slot = value;
  }
}

json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::Config,
          "override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (const auto& p : parts) require(!p.empty(), ErrorCode::Config, "empty segment in override key '" + key + "'");
  json out = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out = json{{*it, out}};
  return out;
}

RunConfig resolve_config(const json& file_overlay, const std::vector<std::string>& overrides) {
  std::vector<json> layers;
  if (!file_overlay.is_null()) layers.push_back(file_overlay);
  for (const auto& o : overrides) layers.push_back(parse_override(o));

  std::string preset = "nclt";
  for (const auto& l : layers) {
    require(l.is_object(), ErrorCode::Config, "config file must hold a JSON object");
    if (l.contains("preset")) {
      require(l["preset"].is_string(), ErrorCode::Config, "config key 'preset' expects string");
      preset = l["preset"].get<std::string>();
    }
  }
  json tree = default_tree(preset);
  for (const auto& l : layers) merge_strict(tree, l);
  tree["preset"] = preset;
  return decode(tree);
}

RunConfig decode(const json& tree) {
  RunConfig rc;
  rc.tree = tree;
  try {
    rc.preset = get<std::string>(tree, "preset");
    rc.seed = get<std::uint64_t>(tree, "seed");

    auto& p = rc.model.projection;
    const json& jp = tree.at("projection");
    p.width = get<int>(jp, "width");
    p.height = get<int>(jp, "height");
    p.fov_up_deg = get<double>(jp, "fov_up_deg");
    p.fov_down_deg = get<double>(jp, "fov_down_deg");
    p.max_range = get<double>(jp, "max_range");
    p.riv_intervals.boundaries = jp.at("riv_intervals").at("boundaries").get<std::vector<double>>();
    p.riv_intervals.kind = parse_split(jp.at("riv_intervals").at("kind").get<std::string>());
    p.bev_intervals.boundaries = jp.at("bev_intervals").at("boundaries").get<std::vector<double>>();
    p.bev_intervals.kind = parse_split(jp.at("bev_intervals").at("kind").get<std::string>());
    const auto bev_value = get<std::string>(jp, "bev_value");
    require(bev_value == "planar_range" || bev_value == "occupancy", ErrorCode::Config,
            "projection.bev_value must be 'planar_range' or 'occupancy'");
    p.bev_value = bev_value == "occupancy" ? views::BevValue::Occupancy : views::BevValue::PlanarRange;

    auto& e = rc.model.encoder;
    const json& je = tree.at("encoder");
    e.d_model = get<std::size_t>(je, "d_model");
    e.n_head = get<std::size_t>(je, "n_head");
    e.d_ffn = get<std::size_t>(je, "d_ffn");
    e.intra_blocks = get<std::size_t>(je, "intra_blocks");
    e.leg.clear();
    for (const auto& s : je.at("leg")) {
      require(s.is_array() && s.size() == 3, ErrorCode::Config, "encoder.leg entries must be [kernel, stride, channels]");
      e.leg.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()});
    }
    const auto norm = get<std::string>(je, "leg_norm");
    require(norm == "none" || norm == "layer", ErrorCode::Config, "encoder.leg_norm must be 'none' or 'layer'");
    e.leg_norm = norm == "layer" ? afe::LegNorm::Layer : afe::LegNorm::None;

    const json& jf = tree.at("fusion");
    rc.model.fusion.cross_blocks = get<std::size_t>(jf, "cross_blocks");
    auto& v = rc.model.fusion.netvlad;
    const json& jv = jf.at("netvlad");
    v.d_inter = get<std::size_t>(jv, "d_inter");
    v.clusters = get<std::size_t>(jv, "clusters");
    v.d_hidden = get<std::size_t>(jv, "d_hidden");
    v.d_output = get<std::size_t>(jv, "d_output");
    v.assign_alpha = get<double>(jv, "assign_alpha");

    auto& w = rc.world;
    const json& jw = tree.at("world");
    w.num_scans = get<std::size_t>(jw, "num_scans");
    w.num_revisits = get<std::size_t>(jw, "num_revisits");
    w.reverse_every = get<std::size_t>(jw, "reverse_every");
    w.revisits.clear();
    for (const auto& r : jw.at("revisits")) {
      for (auto it = r.begin(); it != r.end(); ++it) {
        const auto& k = it.key();
        require(k == "source" || k == "dx" || k == "dy" || k == "yaw_offset", ErrorCode::Config,
                "unknown config key 'world.revisits[]." + k + "'");
      }
      w.revisits.push_back({get<std::size_t>(r, "source"), get<double>(r, "dx"), get<double>(r, "dy"),
                            get<double>(r, "yaw_offset")});
    }
    w.step = get<double>(jw, "step");
    w.heading_jitter_deg = get<double>(jw, "heading_jitter_deg");
    w.revisit_offset = get<double>(jw, "revisit_offset");
    w.landmark_density = get<double>(jw, "landmark_density");
    w.wall_fraction = get<double>(jw, "wall_fraction");
    w.terrain_relief = get<double>(jw, "terrain_relief");
    w.range_noise = get<double>(jw, "range_noise");
    w.sensor_height = get<double>(jw, "sensor_height");
    w.beam_rows = get<int>(jw, "beam_rows");
    w.beam_columns = get<int>(jw, "beam_columns");
    w.bounds.fov_up_deg = get<double>(jw.at("bounds"), "fov_up_deg");
    w.bounds.fov_down_deg = get<double>(jw.at("bounds"), "fov_down_deg");
    w.bounds.max_range = get<double>(jw.at("bounds"), "max_range");

    auto& t = rc.training;
    const json& jt = tree.at("training");
    t.k_pos = get<std::size_t>(jt, "k_pos");
    t.k_neg = get<std::size_t>(jt, "k_neg");
    t.alpha = get<double>(jt, "alpha");
    t.overlap_threshold = get<double>(jt, "overlap_threshold");
    t.learning_rate = get<double>(jt, "learning_rate");
    t.epochs = get<std::size_t>(jt, "epochs");
    t.validation_fraction = get<double>(jt, "validation_fraction");
    t.yaw_augment = get<bool>(jt, "yaw_augment");
    t.batch_tuples = get<std::size_t>(jt, "batch_tuples");
    t.grad_clip = get<double>(jt, "grad_clip");
    t.overlap.width = get<int>(jt.at("overlap"), "width");
    t.overlap.height = get<int>(jt.at("overlap"), "height");
    t.overlap.range_gate = get<double>(jt.at("overlap"), "range_gate");
    t.overlap.pair_radius_factor = get<double>(jt.at("overlap"), "pair_radius_factor");
    t.seed = rc.seed;

    auto& ev = rc.evaluation;
    const json& jev = tree.at("evaluation");
    ev.metrics.recall_at = jev.at("recall_at").get<std::vector<std::size_t>>();
    ev.metrics.keep = get<std::size_t>(jev, "keep");
    ev.positive = get<std::string>(jev, "positive");
    require(ev.positive == "overlap" || ev.positive == "distance", ErrorCode::Config,
            "evaluation.positive must be 'overlap' or 'distance'");
    ev.overlap_threshold = get<double>(jev, "overlap_threshold");
    ev.distance_threshold = get<double>(jev, "distance_threshold");
    ev.query_rows = parse_rows(get<std::string>(jev, "query_rows"));

    const json& jb = tree.at("bench");
    rc.bench.database_rows = get<std::size_t>(jb, "database_rows");
    rc.bench.repetitions = get<std::size_t>(jb, "repetitions");
    rc.bench.top_k = get<std::size_t>(jb, "top_k");
    require(rc.bench.database_rows >= 1 && rc.bench.repetitions >= 1 && rc.bench.top_k >= 1, ErrorCode::Config,
            "bench.database_rows, bench.repetitions and bench.top_k must be at least 1");

    rc.describe_rows = parse_rows(get<std::string>(tree.at("describe"), "rows"));
    rc.index_rows = parse_rows(get<std::string>(tree.at("index"), "rows"));
    rc.query_k = get<std::size_t>(tree.at("query"), "k");
    require(rc.query_k >= 1, ErrorCode::Config, "query.k must be at least 1");

    const json& jpa = tree.at("paths");
    rc.paths = {get<std::string>(jpa, "out"),         get<std::string>(jpa, "dataset"),
                get<std::string>(jpa, "checkpoint"),  get<std::string>(jpa, "descriptors"),
                get<std::string>(jpa, "index"),       get<std::string>(jpa, "queries")};
  } catch (const json::exception& ex) {
    fail(ErrorCode::Config, std::string("malformed config: ") + ex.what());
  }
  rc.model.validate();
  rc.world.validate();
  rc.training.validate();
  return rc;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::hash() const {
  json canonical = tree;
  canonical.erase("paths");
  return fnv1a_hex(canonical.dump());
}

}  // namespace cvtnet::cli
