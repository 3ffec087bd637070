#include "cvtnet/cvtnet.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "cli/pipeline.hpp"
#include "cli/run_config.hpp"
#include "common/binary_io.hpp"
#include "common/error.hpp"
#include "common/version.hpp"
#include "retrieval_db/index.hpp"

struct cvt_config {
  cvtnet::cli::RunConfig rc;
};

struct cvt_model {
  std::unique_ptr<cvtnet::mvf::CvtNet<float>> net;
};

struct cvt_index {
  cvtnet::db::DescriptorIndex index;
};

namespace {

thread_local std::string g_last_error;

cvt_status set_error(cvt_status s, const std::string& message) {
  g_last_error = message;
  return s;
}

template <typename F>
cvt_status guarded(F&& fn) {
  try {
    fn();
    return CVT_OK;
  } catch (const cvtnet::Error& e) {
    return set_error(static_cast<cvt_status>(static_cast<int>(e.code())), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(CVT_ERR_CONFIG, std::string("json: ") + e.what());
  } catch (const std::bad_alloc&) {
    return set_error(CVT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(CVT_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(CVT_ERR_INTERNAL, "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  cvtnet::require(p != nullptr, cvtnet::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

std::vector<std::string> collect(const char* const* overrides, size_t n) {
  std::vector<std::string> out;
  if (n) need(overrides, "overrides");
  for (size_t i = 0; i < n; ++i) {
    need(overrides[i], "override entry");
    out.emplace_back(overrides[i]);
  }
  return out;
}

cvt_status make_config(const nlohmann::json& overlay, const char* const* overrides, size_t n, cvt_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<cvt_config>();
    cfg->rc = cvtnet::cli::resolve_config(overlay, collect(overrides, n));
    *out = cfg.release();
  });
}

}  // namespace

extern "C" {

const char* cvt_version(void) { return CVTNET_VERSION_STRING; }

const char* cvt_last_error(void) { return g_last_error.c_str(); }

const char* cvt_status_name(cvt_status status) {
  if (status == CVT_OK) return "ok";
  return cvtnet::error_code_name(static_cast<cvtnet::ErrorCode>(static_cast<int>(status)));
}

void cvt_string_free(char* s) { std::free(s); }

cvt_status cvt_config_create(const char* json_text, const char* const* overrides, size_t n_overrides,
                             cvt_config** out) {
  nlohmann::json overlay;
  if (json_text) {
    overlay = nlohmann::json::parse(json_text, nullptr, false);
    if (overlay.is_discarded()) return set_error(CVT_ERR_CONFIG, "config text is not valid JSON");
  }
  return make_config(overlay, overrides, n_overrides, out);
}

cvt_status cvt_config_from_file(const char* path, const char* const* overrides, size_t n_overrides,
                                cvt_config** out) {
  nlohmann::json overlay;
  const cvt_status s = guarded([&] {
    need(path, "path");
    cvtnet::require(std::filesystem::exists(path), cvtnet::ErrorCode::NotFound,
                    std::string("config file not found: ") + path);
    const auto bytes = cvtnet::io::read_file(path);
    overlay = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
    cvtnet::require(!overlay.is_discarded(), cvtnet::ErrorCode::Config,
                    std::string("config file ") + path + " is not valid JSON");
  });
  if (s != CVT_OK) return s;
  return make_config(overlay, overrides, n_overrides, out);
}

cvt_status cvt_config_to_json(const cvt_config* config, char** out_json) {
  return guarded([&] {
    need(config, "config");
    need(out_json, "out_json");
    *out_json = dup_string(config->rc.tree.dump(2));
  });
}

cvt_status cvt_config_hash(const cvt_config* config, char** out_hash) {
  return guarded([&] {
    need(config, "config");
    need(out_hash, "out_hash");
    *out_hash = dup_string(config->rc.hash());
  });
}

void cvt_config_free(cvt_config* config) { delete config; }

const char* cvt_command_names(void) {
  static const std::string joined = [] {
    std::string s;
    for (const auto& n : cvtnet::cli::command_names()) s += (s.empty() ? "" : " ") + n;
    return s;
  }();
  return joined.c_str();
}

cvt_status cvt_run(const cvt_config* config, const char* command, unsigned jobs, cvt_progress_fn progress,
                   void* progress_user, char** out_manifest) {
  if (out_manifest) *out_manifest = nullptr;
  return guarded([&] {
    need(config, "config");
    need(command, "command");
    std::function<void(const std::string&)> cb;
    if (progress) cb = [&](const std::string& line) { progress(line.c_str(), progress_user); };
    try {
      const auto manifest = cvtnet::cli::run_command(command, config->rc, jobs, cb);
      if (out_manifest) *out_manifest = dup_string(manifest.dump(2));
    } catch (const cvtnet::Error& e) {
      if (e.code() == cvtnet::ErrorCode::CheckFailed && out_manifest) {
        const auto path = std::filesystem::path(config->rc.paths.out) / (std::string(command) + "_manifest.json");
        const auto bytes = cvtnet::io::read_file(path.string());
        *out_manifest = dup_string(std::string(bytes.begin(), bytes.end()));
      }
      throw;
    }
  });
}

cvt_status cvt_model_create(const cvt_config* config, cvt_model** out) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    *out = nullptr;
    const auto& rc = config->rc;
    auto m = std::make_unique<cvt_model>();
    if (rc.paths.checkpoint.empty()) {
      m->net = std::make_unique<cvtnet::mvf::CvtNet<float>>(rc.model, rc.seed);
    } else {
      cvtnet::require(std::filesystem::exists(rc.paths.checkpoint), cvtnet::ErrorCode::NotFound,
                      "checkpoint not found: " + rc.paths.checkpoint);
      m->net = std::make_unique<cvtnet::mvf::CvtNet<float>>(rc.model, cvtnet::nn::load_checkpoint(rc.paths.checkpoint));
    }
    *out = m.release();
  });
}

cvt_status cvt_model_descriptor_dim(const cvt_model* model, size_t* out_dim) {
  return guarded([&] {
    need(model, "model");
    need(out_dim, "out_dim");
    *out_dim = model->net->config().descriptor_dim();
  });
}

namespace {

void copy_descriptor(const cvt_model* model, const cvtnet::scan::PointCloud& cloud, float* out, size_t out_len) {
  need(out, "out");
  const auto d = model->net->describe(cloud).values;
  cvtnet::require(out_len >= d.size(), cvtnet::ErrorCode::Shape,
                  "output buffer holds " + std::to_string(out_len) + " floats, descriptor needs " +
                      std::to_string(d.size()));
  std::memcpy(out, d.data(), d.size() * sizeof(float));
}

}  // namespace

cvt_status cvt_model_describe_points(const cvt_model* model, const float* xyzi, size_t n_points, float* out,
                                     size_t out_len) {
  return guarded([&] {
    need(model, "model");
    if (n_points) need(xyzi, "xyzi");
    cvtnet::scan::PointCloud cloud = cvtnet::scan::parse_point_cloud(
        reinterpret_cast<const char*>(xyzi), n_points * 4 * sizeof(float), "points");
    copy_descriptor(model, cloud, out, out_len);
  });
}

cvt_status cvt_model_describe_file(const cvt_model* model, const char* path, float* out, size_t out_len) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    copy_descriptor(model, cvtnet::scan::load_point_cloud(path), out, out_len);
  });
}

void cvt_model_free(cvt_model* model) { delete model; }

cvt_status cvt_index_create(size_t dim, cvt_index** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    cvtnet::require(dim > 0, cvtnet::ErrorCode::InvalidArgument, "index dimension must be positive");
    *out = new cvt_index{cvtnet::db::DescriptorIndex(dim)};
  });
}

cvt_status cvt_index_load(const char* path, cvt_index** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    cvtnet::require(std::filesystem::exists(path), cvtnet::ErrorCode::NotFound, std::string("index not found: ") + path);
    *out = new cvt_index{cvtnet::db::DescriptorIndex::load(path)};
  });
}

cvt_status cvt_index_save(const cvt_index* index, const char* path) {
  return guarded([&] {
    need(index, "index");
    need(path, "path");
    index->index.save(path);
  });
}

cvt_status cvt_index_insert(cvt_index* index, const char* scan_id, const float* descriptor, size_t len) {
  return guarded([&] {
    need(index, "index");
    need(scan_id, "scan_id");
    need(descriptor, "descriptor");
    index->index.insert(scan_id, std::span<const float>(descriptor, len));
  });
}

cvt_status cvt_index_size(const cvt_index* index, size_t* out_size) {
  return guarded([&] {
    need(index, "index");
    need(out_size, "out_size");
    *out_size = index->index.size();
  });
}

cvt_status cvt_index_dim(const cvt_index* index, size_t* out_dim) {
  return guarded([&] {
    need(index, "index");
    need(out_dim, "out_dim");
    *out_dim = index->index.dim();
  });
}

cvt_status cvt_index_id(const cvt_index* index, size_t row, char** out_id) {
  return guarded([&] {
    need(index, "index");
    need(out_id, "out_id");
    cvtnet::require(row < index->index.size(), cvtnet::ErrorCode::InvalidArgument,
                    "row " + std::to_string(row) + " out of range");
    *out_id = dup_string(index->index.id(row));
  });
}

cvt_status cvt_index_query(const cvt_index* index, const float* query, size_t len, size_t k, cvt_hit* hits,
                           size_t capacity, size_t* n_hits) {
  return guarded([&] {
    need(index, "index");
    need(query, "query");
    need(n_hits, "n_hits");
    *n_hits = 0;
    const auto result = index->index.query_topk(std::span<const float>(query, len), k);
    cvtnet::require(result.empty() || hits != nullptr, cvtnet::ErrorCode::InvalidArgument, "hits must not be NULL");
    cvtnet::require(capacity >= result.size(), cvtnet::ErrorCode::Shape,
                    "hit buffer holds " + std::to_string(capacity) + " entries, need " + std::to_string(result.size()));
    for (size_t i = 0; i < result.size(); ++i) hits[i] = {result[i].row, result[i].distance};
    *n_hits = result.size();
  });
}

void cvt_index_free(cvt_index* index) { delete index; }

}  // extern "C"
