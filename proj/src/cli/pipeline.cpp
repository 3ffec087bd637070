#include "cli/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

#include <Eigen/Core>

#include "checks/properties.hpp"
#include "common/binary_io.hpp"
#include "common/error.hpp"
#include "common/version.hpp"
#include "retrieval_db/evaluation.hpp"
#include "retrieval_db/index.hpp"
#include "training/overlap.hpp"
#include "training/trainer.hpp"

namespace cvtnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

unsigned resolve_jobs(unsigned jobs) {
  if (jobs != 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception is rethrown.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, jobs), std::max<std::size_t>(n, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct Run {
  std::string command;
  const RunConfig& rc;
  unsigned jobs;
  std::function<void(const std::string&)> progress;
  fs::path out;
  json timings = json::object();
  json outputs = json::array();

  void say(const std::string& line) const {
    if (progress) progress(line);
  }
  void time(const std::string& stage, double ms) { timings[stage] = ms; }
  // `timed` marks files that carry wall-clock measurements and so differ between runs.
  void record(const fs::path& p, bool timed = false) {
    json entry = {{"path", fs::relative(p, out).generic_string()},
                  {"bytes", fs::file_size(p)},
                  {"fnv1a", file_hash(p.string())}};
    if (timed) entry["timed"] = true;
    outputs.push_back(std::move(entry));
  }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot write " + p.string());
  f << text;
  if (!f) fail(ErrorCode::Io, "write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::string require_path(const std::string& value, const char* key, const std::string& command) {
  require(!value.empty(), ErrorCode::InvalidArgument,
          command + " needs paths." + key + " (pass --" + std::string(key) + " or set it in the config)");
  return value;
}

mvf::CvtNet<float> make_model(const RunConfig& rc, json& report) {
  if (rc.paths.checkpoint.empty()) {
    report["model_source"] = "seed " + std::to_string(rc.seed);
    return mvf::CvtNet<float>(rc.model, rc.seed);
  }
  require(fs::exists(rc.paths.checkpoint), ErrorCode::NotFound, "checkpoint not found: " + rc.paths.checkpoint);
  report["model_source"] = rc.paths.checkpoint;
  return mvf::CvtNet<float>(rc.model, nn::load_checkpoint(rc.paths.checkpoint));
}

db::DescriptorIndex load_index_file(const std::string& path, const char* what) {
  require(fs::exists(path), ErrorCode::NotFound, std::string(what) + " file not found: " + path);
  return db::DescriptorIndex::load(path);
}

db::DescriptorIndex subset(const db::DescriptorIndex& src, std::size_t begin, std::size_t end) {
  db::DescriptorIndex out(src.dim());
  out.reserve(end - begin);
  for (std::size_t r = begin; r < end; ++r) out.insert(src.id(r), src.row(r));
  return out;
}

void save_validated(const db::DescriptorIndex& index, const fs::path& p, Run& run) {
  index.save(p.string());
  require(db::DescriptorIndex::load(p.string()) == index, ErrorCode::Internal,
          "descriptor file " + p.string() + " did not read back identically");
  run.record(p);
}

// ---------------------------------------------------------------------------

json cmd_synth(Run& run) {
  auto t0 = Clock::now();
  const auto ds = scan::generate_synthetic_world(run.rc.seed, run.rc.world);
  run.time("generate", ms_since(t0));
  t0 = Clock::now();
  const fs::path dir = run.out / "dataset";
  scan::save_dataset(ds, dir.string());
  const auto back = scan::load_dataset((dir / "manifest.json").string());
  require(back.size() == ds.size() && back.revisits.size() == ds.revisits.size(), ErrorCode::Internal,
          "dataset did not read back with the same shape");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    require(back.scans[i].size() == ds.scans[i].size(), ErrorCode::Internal, "scan " + ds.scans[i].scan_id + " did not read back");
  }
  run.time("save", ms_since(t0));
  run.record(dir / "manifest.json");
  run.record(dir / "poses.txt");
  for (const auto& s : ds.scans) run.record(dir / "scans" / (s.scan_id + ".bin"));

  std::size_t points = 0, reversed = 0;
  for (const auto& s : ds.scans) points += s.size();
  for (const auto& r : ds.revisits) reversed += r.reversed ? 1 : 0;
  run.say("synthetic world: " + std::to_string(ds.size()) + " scans, " + std::to_string(ds.revisits.size()) +
          " revisits -> " + dir.string());
  return {{"scans", ds.size()},
          {"revisits", ds.revisits.size()},
          {"reversed_revisits", reversed},
          {"mean_points", ds.size() ? points / ds.size() : 0},
          {"dataset", (dir / "manifest.json").string()}};
}

json cmd_gen_views(Run& run) {
  const auto ds = load_dataset_path(require_path(run.rc.paths.dataset, "dataset", run.command));
  const auto& proj = run.rc.model.projection;
  proj.validate();
  fs::create_directories(run.out / "views" / "riv");
  fs::create_directories(run.out / "views" / "bev");
  std::vector<std::size_t> dropped_riv(ds.size()), dropped_bev(ds.size());
  auto t0 = Clock::now();
  parallel_for(ds.size(), run.jobs, [&](std::size_t i) {
    const auto& s = ds.scans[i];
    const auto riv = views::project_riv(s, proj);
    const auto bev = views::project_bev(s, proj);
    dropped_riv[i] = riv.dropped_points;
    dropped_bev[i] = bev.dropped_points;
    const auto pr = run.out / "views" / "riv" / (s.scan_id + ".cvtv");
    const auto pb = run.out / "views" / "bev" / (s.scan_id + ".cvtv");
    views::save_view(riv, pr.string());
    views::save_view(bev, pb.string());
    require(views::load_view(pr.string()) == riv && views::load_view(pb.string()) == bev, ErrorCode::Internal,
            "view dump for scan " + s.scan_id + " did not read back identically");
  });
  run.time("gen_views", ms_since(t0));
  std::size_t dr = 0, db_ = 0;
  for (const auto& s : ds.scans) {
    run.record(run.out / "views" / "riv" / (s.scan_id + ".cvtv"));
    run.record(run.out / "views" / "bev" / (s.scan_id + ".cvtv"));
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    dr += dropped_riv[i];
    db_ += dropped_bev[i];
  }
  run.say("projected " + std::to_string(ds.size()) + " scans into " + (run.out / "views").string());
  return {{"scans", ds.size()},
          {"riv_shape", {proj.riv_intervals.layers() + 1, proj.height, proj.width}},
          {"bev_shape", {proj.bev_intervals.layers() + 1, proj.height, proj.width}},
          {"dropped_points_riv", dr},
          {"dropped_points_bev", db_}};
}

json cmd_train(Run& run) {
  const auto& rc = run.rc;
  const auto ds = load_dataset_path(require_path(rc.paths.dataset, "dataset", run.command));
  json report;
  auto t0 = Clock::now();
  const auto table = train::OverlapTable::compute(ds, rc.training.overlap);
  run.time("overlap", ms_since(t0));
  run.say("overlap table: " + std::to_string(table.stored_pairs()) + " pairs");

  auto model = make_model(rc, report);
  train::TrainOutputs outputs;
  outputs.log_csv = (run.out / "train_log.csv").string();
  outputs.checkpoint = (run.out / "checkpoint.cvtp").string();
  outputs.config_hash = rc.hash();
  train::Trainer trainer(model, ds, table, rc.training, outputs);

  std::string epochs_csv = "epoch,steps,mean_loss,val_ar1,val_ar1_forward,val_ar1_reversed,wall_ms\n";
  t0 = Clock::now();
  const auto tr = trainer.run([&](const train::EpochReport& e) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.steps, e.mean_loss,
                  e.validation.ar1, e.validation.ar1_forward, e.validation.ar1_reversed, e.wall_ms);
    epochs_csv += line;
    std::snprintf(line, sizeof line, "epoch %zu: loss %.4f  val AR@1 %.3f (forward %.3f, reversed %.3f)", e.epoch,
                  e.mean_loss, e.validation.ar1, e.validation.ar1_forward, e.validation.ar1_reversed);
    run.say(line);
  });
  run.time("train", ms_since(t0));
  write_text(run.out / "epochs.csv", epochs_csv);

  require(nn::hash_params(nn::load_checkpoint(outputs.checkpoint)) == nn::hash_params(tr.best_params),
          ErrorCode::Internal, "checkpoint did not read back identically");
  run.record(outputs.checkpoint);
  run.record(outputs.checkpoint + ".json");
  run.record(run.out / "epochs.csv", true);
  run.record(outputs.log_csv, true);

  const auto& best = tr.epochs.at(tr.best_epoch);
  report["parameters"] = model.params().parameter_count();
  report["epochs"] = tr.epochs.size() - 1;
  report["steps"] = tr.step_losses.size();
  report["best_epoch"] = tr.best_epoch;
  report["best_val_ar1"] = tr.best_val_ar1;
  report["best_val_ar1_forward"] = best.validation.ar1_forward;
  report["best_val_ar1_reversed"] = best.validation.ar1_reversed;
  report["final_loss"] = tr.epochs.back().mean_loss;
  report["mining"] = {{"candidates", tr.mining.candidates}, {"emitted", tr.mining.emitted}};
  report["checkpoint"] = outputs.checkpoint;
  return report;
}

json cmd_describe(Run& run) {
  const auto& rc = run.rc;
  const auto ds = load_dataset_path(require_path(rc.paths.dataset, "dataset", run.command));
  json report;
  const auto model = make_model(rc, report);
  const auto [begin, end] = select_rows(rc.describe_rows, ds.size(), rc.training.validation_fraction);
  std::vector<std::vector<float>> out(end - begin);
  auto t0 = Clock::now();
  parallel_for(end - begin, run.jobs, [&](std::size_t i) { out[i] = model.describe(ds.scans[begin + i]).values; });
  run.time("describe", ms_since(t0));

  db::DescriptorIndex index(rc.model.descriptor_dim());
  index.reserve(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) index.insert(ds.scans[begin + i].scan_id, out[i]);
  save_validated(index, run.out / "descriptors.cvtd", run);
  run.say("described " + std::to_string(index.size()) + " scans (" + std::to_string(index.dim()) + "-d)");
  report["rows"] = rows_name(rc.describe_rows);
  report["count"] = index.size();
  report["dim"] = index.dim();
  report["descriptors"] = (run.out / "descriptors.cvtd").string();
  return report;
}

json cmd_index(Run& run) {
  const auto& rc = run.rc;
  const auto src = load_index_file(require_path(rc.paths.descriptors, "descriptors", run.command), "descriptors");
  const auto [begin, end] = select_rows(rc.index_rows, src.size(), rc.training.validation_fraction);
  auto t0 = Clock::now();
  const auto index = subset(src, begin, end);
  run.time("build", ms_since(t0));
  save_validated(index, run.out / "index.cvtd", run);
  run.say("index of " + std::to_string(index.size()) + " rows -> " + (run.out / "index.cvtd").string());
  return {{"rows", rows_name(rc.index_rows)}, {"count", index.size()}, {"dim", index.dim()},
          {"index", (run.out / "index.cvtd").string()}};
}

json cmd_query(Run& run) {
  const auto& rc = run.rc;
  const auto index = load_index_file(require_path(rc.paths.index, "index", run.command), "index");
  const auto queries = load_index_file(require_path(rc.paths.queries, "queries", run.command), "queries");
  require(queries.dim() == index.dim(), ErrorCode::Shape,
          "query descriptors are " + std::to_string(queries.dim()) + "-d but the index holds " +
              std::to_string(index.dim()) + "-d rows");
  std::string csv = "query_id,rank,db_id,distance\n";
  std::string jsonl;
  auto t0 = Clock::now();
  char line[512];
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto hits = index.query_topk(queries.row(q), rc.query_k);
    json jq = {{"query", queries.id(q)}, {"hits", json::array()}};
    for (std::size_t r = 0; r < hits.size(); ++r) {
      std::snprintf(line, sizeof line, "%s,%zu,%s,%.9g\n", queries.id(q).c_str(), r + 1, hits[r].scan_id.c_str(),
                    hits[r].distance);
      csv += line;
      jq["hits"].push_back({{"id", hits[r].scan_id}, {"distance", hits[r].distance}});
    }
    jsonl += jq.dump() + "\n";
  }
  run.time("query", ms_since(t0));
  write_text(run.out / "results.csv", csv);
  write_text(run.out / "results.jsonl", jsonl);
  run.record(run.out / "results.csv");
  run.record(run.out / "results.jsonl");
  run.say("answered " + std::to_string(queries.size()) + " queries (top " + std::to_string(rc.query_k) + ")");
  return {{"queries", queries.size()}, {"k", rc.query_k}, {"results", (run.out / "results.csv").string()}};
}

json cmd_eval(Run& run) {
  const auto& rc = run.rc;
  const auto ds = load_dataset_path(require_path(rc.paths.dataset, "dataset", run.command));
  const auto index = load_index_file(require_path(rc.paths.index, "index", run.command), "index");
  const auto qfile = load_index_file(require_path(rc.paths.queries, "queries", run.command), "queries");
  require(qfile.dim() == index.dim(), ErrorCode::Shape, "query and index descriptor lengths differ");
  const auto [qb, qe] = select_rows(rc.evaluation.query_rows, qfile.size(), rc.training.validation_fraction);

  std::unordered_map<std::string, std::size_t> scan_of;
  for (std::size_t i = 0; i < ds.size(); ++i) scan_of[ds.scans[i].scan_id] = i;
  auto lookup = [&](const std::string& id) {
    const auto it = scan_of.find(id);
    require(it != scan_of.end(), ErrorCode::NotFound, "descriptor id '" + id + "' is not a scan of the dataset");
    return it->second;
  };
  std::vector<db::Query> queries;
  std::vector<std::size_t> q_scan;
  for (std::size_t r = qb; r < qe; ++r) {
    const auto row = qfile.row(r);
    queries.push_back({qfile.id(r), std::vector<float>(row.begin(), row.end())});
    q_scan.push_back(lookup(qfile.id(r)));
  }
  std::vector<std::size_t> db_scan;
  for (std::size_t r = 0; r < index.size(); ++r) db_scan.push_back(lookup(index.id(r)));

  auto t0 = Clock::now();
  db::PositivePredicate positive;
  train::OverlapTable table(0);
  if (rc.evaluation.positive == "overlap") {
    table = train::OverlapTable::compute(ds, rc.training.overlap);
    const double thr = rc.evaluation.overlap_threshold;
    positive = [&, thr](std::size_t q, std::size_t d) { return table.get(q_scan[q], db_scan[d]) > thr; };
  } else {
    const double thr = rc.evaluation.distance_threshold;
    positive = [&, thr](std::size_t q, std::size_t d) {
      return (ds.poses[q_scan[q]].translation - ds.poses[db_scan[d]].translation).norm() < thr;
    };
  }
  run.time("ground_truth", ms_since(t0));
  t0 = Clock::now();
  const auto rep = db::evaluate_place_recognition(index, queries, positive, rc.evaluation.metrics);
  run.time("evaluate", ms_since(t0));

  std::vector<int> reversed_of(ds.size(), -1);
  for (const auto& r : ds.revisits) reversed_of[r.query] = r.reversed ? 1 : 0;
  std::size_t hit_f = 0, n_f = 0, hit_r = 0, n_r = 0;
  std::string per_query = "query_id,has_positive,first_positive_rank,top1_id,top1_distance,revisit\n";
  char line[512];
  for (std::size_t q = 0; q < rep.queries.size(); ++q) {
    const auto& o = rep.queries[q];
    const int rev = reversed_of[q_scan[q]];
    const char* kind = rev < 0 ? "none" : (rev ? "reversed" : "forward");
    std::snprintf(line, sizeof line, "%s,%d,%zu,%s,%.9g,%s\n", o.id.c_str(), o.has_positive ? 1 : 0,
                  o.first_positive_rank, o.nearest.empty() ? "" : o.nearest[0].scan_id.c_str(),
                  o.nearest.empty() ? 0.0 : o.nearest[0].distance, kind);
    per_query += line;
    if (!o.has_positive || rev < 0) continue;
    const bool top1 = o.first_positive_rank == 1;
    if (rev) {
      ++n_r;
      hit_r += top1;
    } else {
      ++n_f;
      hit_f += top1;
    }
  }
  std::string pr = "threshold,precision,recall\n";
  for (const auto& p : rep.pr_curve) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
    pr += line;
  }
  std::string recall = "n,recall\n";
  json ar = json::object();
  for (std::size_t i = 0; i < rep.recall_at.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.9g\n", rep.recall_at[i], rep.average_recall[i]);
    recall += line;
    ar["AR@" + std::to_string(rep.recall_at[i])] = rep.average_recall[i];
  }
  json report = {{"recall", ar},
                 {"auc", rep.auc},
                 {"f1_max", rep.f1_max},
                 {"evaluated_queries", rep.evaluated_queries},
                 {"excluded_queries", rep.excluded_queries},
                 {"database_rows", index.size()},
                 {"positive", rc.evaluation.positive}};
  if (n_f) report["revisit_ar1_forward"] = double(hit_f) / n_f;
  if (n_r) report["revisit_ar1_reversed"] = double(hit_r) / n_r;
  write_json(run.out / "eval_report.json", report);
  write_text(run.out / "pr_curve.csv", pr);
  write_text(run.out / "recall_at_n.csv", recall);
  write_text(run.out / "per_query.csv", per_query);
  for (const char* f : {"eval_report.json", "pr_curve.csv", "recall_at_n.csv", "per_query.csv"}) run.record(run.out / f);
  for (const auto& [k, v] : ar.items()) {
    std::snprintf(line, sizeof line, "%s = %.4f", k.c_str(), v.get<double>());
    run.say(line);
  }
  std::snprintf(line, sizeof line, "AUC = %.4f  F1max = %.4f  (%zu queries, %zu without positives)", rep.auc,
                rep.f1_max, rep.evaluated_queries, rep.excluded_queries);
  run.say(line);
  return report;
}

json stage_stats(std::vector<double> ms) {
  std::sort(ms.begin(), ms.end());
  double sum = 0.0;
  for (double v : ms) sum += v;
  return {{"mean_ms", sum / ms.size()}, {"median_ms", ms[ms.size() / 2]}, {"min_ms", ms.front()}, {"max_ms", ms.back()}};
}

json cmd_bench(Run& run) {
  const auto& rc = run.rc;
  json report;
  const auto model = make_model(rc, report);
  const auto& proj = rc.model.projection;
  std::vector<scan::PointCloud> clouds;
  if (!rc.paths.dataset.empty()) {
    const auto ds = load_dataset_path(rc.paths.dataset);
    for (std::size_t i = 0; i < rc.bench.repetitions; ++i) clouds.push_back(ds.scans[i % ds.size()]);
  } else {
    scan::WorldConfig wc = rc.world;
    wc.num_scans = rc.bench.repetitions;
    wc.num_revisits = 0;
    wc.revisits.clear();
    wc.bounds = {proj.fov_up_deg, proj.fov_down_deg, proj.max_range};
    clouds = scan::generate_synthetic_world(rc.seed, wc).scans;
  }

  const std::size_t dim = rc.model.descriptor_dim();
  db::DescriptorIndex index(dim);
  index.reserve(rc.bench.database_rows);
  {
    std::mt19937_64 rng(rc.seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::vector<float> row(dim);
    char id[32];
    for (std::size_t r = 0; r < rc.bench.database_rows; ++r) {
      for (float& x : row) x = g(rng);
      std::snprintf(id, sizeof id, "db%07zu", r);
      index.insert(id, row);
    }
  }

  std::vector<double> t_views, t_desc, t_query;
  for (const auto& cloud : clouds) {
    auto t0 = Clock::now();
    const auto riv = views::project_riv(cloud, proj);
    const auto bev = views::project_bev(cloud, proj);
    t_views.push_back(ms_since(t0));
    t0 = Clock::now();
    const auto d = model.describe_views(riv, bev);
    t_desc.push_back(ms_since(t0));
    t0 = Clock::now();
    const auto hits = index.query_topk(d, rc.bench.top_k);
    t_query.push_back(ms_since(t0));
    require(hits.size() == std::min(rc.bench.top_k, index.size()), ErrorCode::Internal, "short retrieval result");
  }
  const std::string qname = "query_top" + std::to_string(rc.bench.top_k);
  json stages = {{"gen_views", stage_stats(t_views)}, {"describe", stage_stats(t_desc)}, {qname, stage_stats(t_query)}};
  double total = 0.0;
  std::string csv = "stage,mean_ms,median_ms,min_ms,max_ms\n";
  char line[256];
  for (const char* s : {"gen_views", "describe"}) {
    const auto& st = stages[s];
    total += st["mean_ms"].get<double>();
    std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%.4f,%.4f\n", s, st["mean_ms"].get<double>(),
                  st["median_ms"].get<double>(), st["min_ms"].get<double>(), st["max_ms"].get<double>());
    csv += line;
  }
  {
    const auto& st = stages[qname];
    total += st["mean_ms"].get<double>();
    std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%.4f,%.4f\n", qname.c_str(), st["mean_ms"].get<double>(),
                  st["median_ms"].get<double>(), st["min_ms"].get<double>(), st["max_ms"].get<double>());
    csv += line;
  }
  for (const auto& [name, st] : stages.items()) {
    std::snprintf(line, sizeof line, "%-12s %9.3f ms (median %.3f)", name.c_str(), st["mean_ms"].get<double>(),
                  st["median_ms"].get<double>());
    run.say(line);
  }
  report["stages"] = stages;
  report["total_mean_ms"] = total;
  report["database_rows"] = index.size();
  report["descriptor_dim"] = dim;
  report["repetitions"] = clouds.size();
  report["parameters"] = model.params().parameter_count();
  write_json(run.out / "bench.json", report);
  write_text(run.out / "bench.csv", csv);
  run.record(run.out / "bench.json", true);
  run.record(run.out / "bench.csv", true);
  return report;
}

json cmd_selftest(Run& run) {
  const auto& rc = run.rc;
  json suites = json::array();
  bool all = true;
  char line[256];
  auto add = [&](const std::string& name, double measured, double tolerance, bool pass, double seconds,
                 const std::string& detail) {
    suites.push_back({{"name", name}, {"measured", measured}, {"tolerance", tolerance}, {"passed", pass},
                      {"seconds", seconds}, {"detail", detail}});
    all = all && pass;
    std::snprintf(line, sizeof line, "[%s] %-28s measured %.3g (tolerance %.3g) %.2fs %s", pass ? "PASS" : "FAIL",
                  name.c_str(), measured, tolerance, seconds, detail.c_str());
    run.say(line);
  };
  const auto t0 = Clock::now();
  const auto& proj = rc.model.projection;

  const mvf::CvtNet<float> model(rc.model, rc.seed);
  const auto clouds = checks::boundary_safe_clouds(5, rc.seed, {proj.fov_up_deg, proj.fov_down_deg, proj.max_range},
                                                   proj.width);
  const auto yaw = checks::yaw_invariance(model, clouds);
  add("yaw_invariance", yaw.value, 1e-4, yaw.value < 1e-4, yaw.seconds, std::to_string(yaw.cases) + " rotations");

  const auto chain = checks::equivariance_chain(rc.model, 20, rc.seed + 1);
  for (const auto& [name, m] : {std::pair{"equivariance.projection", chain.projection},
                                std::pair{"equivariance.leg", chain.leg},
                                std::pair{"equivariance.intra", chain.intra},
                                std::pair{"equivariance.inter", chain.inter}}) {
    add(name, m.value, 1e-5, m.value < 1e-5, m.seconds, std::to_string(m.cases) + " cases");
  }
  const auto perm = checks::netvlad_permutation(rc.model, 20, rc.seed + 2);
  add("netvlad_permutation", perm.value, 1e-6, perm.value < 1e-6, perm.seconds,
      std::to_string(perm.cases) + " permutations");
  const auto align = checks::view_alignment(proj, 10, 10000, rc.seed + 3);
  add("view_alignment", align.value, 0.0, align.value == 0.0 && align.cases > align.skipped, align.seconds,
      align.detail);
  const auto trip = checks::triplet_oracle();
  add("triplet_oracle", trip.value, 1e-12, trip.value <= 1e-12, trip.seconds, std::to_string(trip.cases) + " cases");
  const auto ret = checks::retrieval_oracle(2000, rc.model.descriptor_dim(), 20, 5, rc.seed + 4);
  add("retrieval_oracle", ret.exact ? 0.0 : 1.0, 0.0, ret.exact, ret.worst_ms / 1e3,
      std::to_string(ret.queries) + " queries over 2000 rows");
  run.time("selftest", ms_since(t0));

  json report = {{"passed", all}, {"suites", suites}};
  write_json(run.out / "selftest.json", report);
  run.record(run.out / "selftest.json", true);
  return report;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth", "gen-views", "train", "describe", "index",
                                              "query", "eval",      "bench", "selftest"};
  return names;
}

scan::TrajectoryDataset load_dataset_path(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "manifest.json";
  require(fs::exists(p), ErrorCode::NotFound,
          "dataset manifest not found: " + p.string() + " (run `cvtnet synth` or point --dataset at a dataset directory)");
  return scan::load_dataset(p.string());
}

std::pair<std::size_t, std::size_t> select_rows(RowSelection rows, std::size_t n, double validation_fraction) {
  if (rows == RowSelection::All || n == 0) return {0, n};
  const auto split = train::trajectory_split(n, validation_fraction);
  if (rows == RowSelection::Train) return {0, split.train.size()};
  return {split.train.size(), n};
}

std::string file_hash(const std::string& path) {
  const auto bytes = io::read_file(path);
  return fnv1a_hex(std::string(bytes.begin(), bytes.end()));
}

json run_command(const std::string& command, const RunConfig& config, unsigned jobs,
                 const std::function<void(const std::string&)>& progress) {
  const auto& names = command_names();
  require(std::find(names.begin(), names.end(), command) != names.end(), ErrorCode::InvalidArgument,
          "unknown command '" + command + "'");
  require(!config.paths.out.empty(), ErrorCode::InvalidArgument, command + " needs an output directory (--out)");
  Run run{command, config, resolve_jobs(jobs), progress, fs::path(config.paths.out)};
  fs::create_directories(run.out);
  write_json(run.out / (command + "_config.json"), config.tree);

  const auto t0 = Clock::now();
  json report;
  if (command == "synth") report = cmd_synth(run);
  else if (command == "gen-views") report = cmd_gen_views(run);
  else if (command == "train") report = cmd_train(run);
  else if (command == "describe") report = cmd_describe(run);
  else if (command == "index") report = cmd_index(run);
  else if (command == "query") report = cmd_query(run);
  else if (command == "eval") report = cmd_eval(run);
  else if (command == "bench") report = cmd_bench(run);
  else report = cmd_selftest(run);
  run.time("total", ms_since(t0));

  json manifest = {{"command", command},
                   {"config_hash", config.hash()},
                   {"seed", config.seed},
                   {"jobs", run.jobs},
                   {"versions",
                    {{"cvtnet", CVTNET_VERSION_STRING},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                   {"timings_ms", run.timings},
                   {"outputs", run.outputs},
                   {"report", report}};
  write_json(run.out / (command + "_manifest.json"), manifest);
  if (command == "selftest" && !report["passed"].get<bool>()) {
    fail(ErrorCode::CheckFailed, "one or more property suites failed (see selftest.json)");
  }
  return manifest;
}

}  // namespace cvtnet::cli
