#pragma once

// Multi-start campaigns: seeds x sweep values, one persisted directory per
// run, resumable manifest.
//
// Layout:
//   <output_dir>/manifest
//   <output_dir>/runs/<run_id>/{config, history.csv, final_density.pgm, result}
//
// A run directory is assembled under runs/.<run_id>.tmp and renamed into place
// once complete, so a present `result` file always means a finished run.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "softfinger/config.hpp"
#include "softfinger/error.hpp"
#include "softfinger/optimizer.hpp"
#include "softfinger/pareto.hpp"

namespace softfinger {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run records

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeError("cannot write '" + tmp.string() + "'");
    f << content;
    f.flush();
    if (!f) throw RuntimeError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string history_csv(const std::vector<HistoryRow>& h) {
  std::ostringstream os;
  os << "iter,phi,mean_output_disp_mm,strain_energy_Nmm,volume_fraction,max_density_change\n";
  for (const HistoryRow& r : h) {
    os << r.iter << ',' << detail::format_double(r.phi) << ',' << detail::format_double(r.mean_output_disp) << ','
       << detail::format_double(r.strain_energy) << ',' << detail::format_double(r.volume_fraction) << ','
       << detail::format_double(r.max_density_change) << '\n';
  }
  return os.str();
}

/// Binary graymap, nx by ny, top row first; 255 * density, 0 outside the domain.
inline std::string density_pgm(const Mesh& m, const DensityField& rho) {
  std::string out = "P5\n" + std::to_string(m.nx) + " " + std::to_string(m.ny) + "\n255\n";
  for (int j = m.ny - 1; j >= 0; --j) {
    for (int i = 0; i < m.nx; ++i) {
      const int a = m.active_index[static_cast<std::size_t>(m.element_id(i, j))];
      const double v = a < 0 ? 0.0 : std::clamp(rho[static_cast<std::size_t>(a)], 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
  return out;
}

/// Decoded graymap (values 0..255, top row first).
struct Graymap {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> pixels;
};

inline Graymap parse_pgm(const std::string& data) {
  std::istringstream in(data);
  std::string magic;
  Graymap g;
  int maxval = 0;
  in >> magic >> g.width >> g.height >> maxval;
  if (magic != "P5" || !in || maxval != 255 || g.width <= 0 || g.height <= 0) throw RuntimeError("malformed graymap");
  in.get();
  g.pixels.resize(static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height));
  in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(g.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(g.pixels.size())) throw RuntimeError("truncated graymap");
  return g;
}

/// Campaign-level view of a run, as stored in the result record.
struct RunRecord {
  std::string run_id;
  std::string status;  // completed | failed
  std::string error;
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  bool converged = false;
  int iterations = 0;
  double phi = 0.0;
  double mean_output_disp = 0.0;
  double total_strain_energy = 0.0;
  double volume_fraction = 0.0;
  std::vector<double> final_rho;

  [[nodiscard]] bool completed() const { return status == "completed"; }
};

inline json record_to_json(const RunRecord& r) {
  json j;
  j["run_id"] = r.run_id;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  j["sweep_value"] = r.sweep_value;
  j["seed"] = r.seed;
  j["converged"] = r.converged;
  j["iterations"] = r.iterations;
  j["phi"] = r.phi;
  j["mean_output_disp_mm"] = r.mean_output_disp;
  j["strain_energy_Nmm"] = r.total_strain_energy;
  j["volume_fraction"] = r.volume_fraction;
  j["final_rho"] = r.final_rho;
  return j;
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.error = j.value("error", std::string{});
  r.sweep_value = j.at("sweep_value").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.converged = j.at("converged").get<bool>();
  r.iterations = j.at("iterations").get<int>();
  r.phi = j.at("phi").get<double>();
  r.mean_output_disp = j.at("mean_output_disp_mm").get<double>();
  r.total_strain_energy = j.at("strain_energy_Nmm").get<double>();
  r.volume_fraction = j.at("volume_fraction").get<double>();
  r.final_rho = j.at("final_rho").get<std::vector<double>>();
  return r;
}

inline RunRecord make_record(const RunResult& res, double sweep_value) {
  RunRecord r;
  r.run_id = res.run_id;
  r.status = res.failed ? "failed" : "completed";
  r.error = res.error;
  r.sweep_value = sweep_value;
  r.seed = res.config.seed;
  r.converged = res.converged;
  if (!res.history.empty()) {
    const HistoryRow& h = res.history.back();
    r.iterations = h.iter;
    r.phi = h.phi;
    r.mean_output_disp = h.mean_output_disp;
    r.total_strain_energy = h.strain_energy;
    r.volume_fraction = h.volume_fraction;
  }
  r.final_rho = res.final_rho.rho;
  return r;
}

/// Writes runs/<id>/ via a temporary directory and an atomic rename.
inline void persist_run(const fs::path& output_dir, const AppConfig& run_cfg, const RunResult& res, double sweep_value,
                        const Mesh* mesh) {
  const fs::path runs = output_dir / "runs";
  fs::create_directories(runs);
  const fs::path tmp = runs / ("." + res.run_id + ".tmp");
  const fs::path dst = runs / res.run_id;
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_file_atomic(tmp / "config", echo_config(run_cfg));
  write_file_atomic(tmp / "history.csv", history_csv(res.history));
  if (mesh != nullptr && res.final_rho.size() == mesh->active_count()) {
    write_file_atomic(tmp / "final_density.pgm", density_pgm(*mesh, res.final_rho));
  }
  write_file_atomic(tmp / "result", record_to_json(make_record(res, sweep_value)).dump(1) + "\n");
  fs::remove_all(dst);
  fs::rename(tmp, dst);
}

/// Reads every runs/<id>/result below `dir` (dir may be a campaign directory or
/// its runs/ subdirectory). Unreadable records are reported in `warnings`.
inline std::vector<RunRecord> load_records(const fs::path& dir, std::vector<std::string>* warnings = nullptr) {
  std::vector<RunRecord> out;
  fs::path runs = dir / "runs";
  if (!fs::is_directory(runs)) runs = dir;
  if (!fs::is_directory(runs)) return out;
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(runs)) {
    if (e.is_directory() && e.path().filename().string().front() != '.') entries.push_back(e.path());
  }
  std::sort(entries.begin(), entries.end());
  for (const fs::path& p : entries) {
    const fs::path rf = p / "result";
    if (!fs::exists(rf)) continue;
    try {
      out.push_back(record_from_json(json::parse(read_file(rf))));
    } catch (const std::exception& e) {
      if (warnings) warnings->push_back("skipping corrupt run record '" + rf.string() + "': " + e.what());
    }
  }
  return out;
}

inline std::vector<ParetoPoint> pareto_points(const std::vector<RunRecord>& recs) {
  std::vector<ParetoPoint> pts;
  for (const RunRecord& r : recs) {
    if (r.completed()) pts.push_back({r.run_id, r.mean_output_disp, r.total_strain_energy, false});
  }
  return pareto_front(std::move(pts));
}

// ---------------------------------------------------------------------------
// Campaign

struct CampaignSpec {
  AppConfig base;
  fs::path output_dir;
  /// Stop dispatching after this many newly finished runs (in-flight runs are
  /// still persisted). Unset means run everything.
  std::optional<int> max_new_runs;

  [[nodiscard]] SweepKind sweep_kind() const { return base.sweep_kind(); }
  [[nodiscard]] const std::vector<double>& sweep() const { return base.campaign.sweep; }
  [[nodiscard]] int seeds_per_point() const { return base.campaign.seeds_per_point; }
  [[nodiscard]] int parallelism() const { return base.campaign.parallelism; }

  void validate() const {
    if (seeds_per_point() < 1) throw ConfigError("campaign.seeds_per_point must be >= 1");
    if (parallelism() < 1) throw ConfigError("campaign.parallelism must be >= 1");
    if (sweep().empty()) throw ConfigError("campaign.sweep is empty");
    std::set<double> seen;
    for (double v : sweep()) {
      if (!seen.insert(v).second) throw ConfigError("campaign.sweep has duplicate values");
      if (sweep_kind() == SweepKind::volume_fraction && !(v >= 0.05 && v <= 1.0)) {
        throw ConfigError("campaign.sweep: volume fraction " + detail::format_double(v) + " outside [0.05, 1]");
      }
      if (sweep_kind() == SweepKind::input_displacement && !(v > 0.0)) {
        throw ConfigError("campaign.sweep: input displacement must be positive");
      }
    }
  }
};

inline std::string make_run_id(SweepKind kind, double value, std::uint64_t seed) {
  char buf[64];
  if (kind == SweepKind::volume_fraction) {
    std::snprintf(buf, sizeof buf, "vf%.3f_s%04llu", value, static_cast<unsigned long long>(seed));
  } else {
    std::snprintf(buf, sizeof buf, "xin%06.2f_s%04llu", value, static_cast<unsigned long long>(seed));
  }
  return buf;
}

struct CampaignJob {
  std::string run_id;
  double sweep_value = 0.0;
  AppConfig config;  // fully resolved single-run configuration
};

/// Every run of the campaign in deterministic order (sweep-major).
inline std::vector<CampaignJob> campaign_jobs(const CampaignSpec& spec) {
  std::vector<CampaignJob> jobs;
  for (double v : spec.sweep()) {
    for (int k = 0; k < spec.seeds_per_point(); ++k) {
      CampaignJob j;
      j.sweep_value = v;
      j.config = spec.base;
      j.config.campaign.parallelism = 1;  // session setting, kept out of run records
      if (spec.sweep_kind() == SweepKind::volume_fraction) {
        j.config.run.volume_fraction = v;
        j.config.run.x_in.reset();
      } else {
        j.config.run.x_in = v;
      }
      j.config.run.seed = spec.base.run.seed + static_cast<std::uint64_t>(k);
      j.run_id = make_run_id(spec.sweep_kind(), v, j.config.run.seed);
      jobs.push_back(std::move(j));
    }
  }
  return jobs;
}

struct ManifestEntry {
  std::string run_id;
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  std::string status;  // completed | failed | pending
  std::string error;
  double mean_output_disp = 0.0;
  double total_strain_energy = 0.0;
  bool converged = false;
  int iterations = 0;
  std::optional<double> wall_time;
};

struct Manifest {
  std::string formulation;
  std::string sweep_kind;
  std::vector<double> sweep;
  int seeds_per_point = 0;
  std::vector<ManifestEntry> runs;
  std::vector<std::string> front;  // non-dominated run ids, sorted
  int executed_this_session = 0;

  [[nodiscard]] std::size_t count(std::string_view status) const {
    return static_cast<std::size_t>(
        std::count_if(runs.begin(), runs.end(), [&](const ManifestEntry& e) { return e.status == status; }));
  }
  [[nodiscard]] std::set<std::string> run_ids(std::string_view status) const {
    std::set<std::string> s;
    for (const auto& e : runs) {
      if (e.status == status) s.insert(e.run_id);
    }
    return s;
  }
};

inline std::string iso_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json manifest_to_json(const Manifest& m) {
  json j;
  j["formulation"] = m.formulation;
  j["sweep_kind"] = m.sweep_kind;
  j["sweep"] = m.sweep;
  j["seeds_per_point"] = m.seeds_per_point;
  j["updated"] = iso_timestamp();
  json runs = json::array();
  for (const auto& e : m.runs) {
    json r;
    r["run_id"] = e.run_id;
    r["sweep_value"] = e.sweep_value;
    r["seed"] = e.seed;
    r["status"] = e.status;
    if (!e.error.empty()) r["error"] = e.error;
    if (e.status == "completed") {
      r["mean_output_disp_mm"] = e.mean_output_disp;
      r["strain_energy_Nmm"] = e.total_strain_energy;
      r["converged"] = e.converged;
      r["iterations"] = e.iterations;
    }
    if (e.wall_time) r["wall_time_s"] = *e.wall_time;
    runs.push_back(std::move(r));
  }
  j["runs"] = std::move(runs);
  j["front"] = m.front;
  return j;
}

inline Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.formulation = j.at("formulation").get<std::string>();
  m.sweep_kind = j.at("sweep_kind").get<std::string>();
  m.sweep = j.at("sweep").get<std::vector<double>>();
  m.seeds_per_point = j.at("seeds_per_point").get<int>();
  for (const auto& r : j.at("runs")) {
    ManifestEntry e;
    e.run_id = r.at("run_id").get<std::string>();
    e.sweep_value = r.at("sweep_value").get<double>();
    e.seed = r.at("seed").get<std::uint64_t>();
    e.status = r.at("status").get<std::string>();
    e.error = r.value("error", std::string{});
    e.mean_output_disp = r.value("mean_output_disp_mm", 0.0);
    e.total_strain_energy = r.value("strain_energy_Nmm", 0.0);
    e.converged = r.value("converged", false);
    e.iterations = r.value("iterations", 0);
    if (r.contains("wall_time_s")) e.wall_time = r.at("wall_time_s").get<double>();
    m.runs.push_back(std::move(e));
  }
  m.front = j.at("front").get<std::vector<std::string>>();
  return m;
}

inline Manifest load_manifest(const fs::path& dir) { return manifest_from_json(json::parse(read_file(dir / "manifest"))); }

namespace detail {

/// Unbounded multi-producer single-consumer queue.
template <typename T>
class Channel {
 public:
  void push(T v) {
    {
      std::lock_guard lk(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  T pop() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !q_.empty(); });
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

inline void refresh_front(Manifest& m) {
  std::vector<ParetoPoint> pts;
  for (const auto& e : m.runs) {
    if (e.status == "completed") pts.push_back({e.run_id, e.mean_output_disp, e.total_strain_energy, false});
  }
  m.front.clear();
  for (const auto& p : pareto_front(std::move(pts))) {
    if (!p.dominated) m.front.push_back(p.run_id);
  }
  std::sort(m.front.begin(), m.front.end());
}

}  // namespace detail

/// Progress callback: (run_id, status, finished so far this session).
using CampaignProgress = std::function<void(const std::string&, const std::string&, int)>;

/// Executes every pending run. Completed and failed runs found on disk are
/// skipped. `stop` (optional) is polled before each dispatch; in-flight runs
/// are still persisted once it is raised.
inline Manifest run_campaign(const CampaignSpec& spec, const std::atomic<bool>* stop = nullptr,
                             const CampaignProgress& progress = {}) {
  spec.validate();
  spec.base.run.material.validate();
  fs::create_directories(spec.output_dir / "runs");
  for (const auto& e : fs::directory_iterator(spec.output_dir / "runs")) {
    const std::string name = e.path().filename().string();
    if (!name.empty() && name.front() == '.' && name.ends_with(".tmp")) fs::remove_all(e.path());
  }

  const std::vector<CampaignJob> jobs = campaign_jobs(spec);
  std::map<std::string, RunRecord> done;
  for (RunRecord& r : load_records(spec.output_dir)) done.emplace(r.run_id, std::move(r));

  Manifest man;
  man.formulation = std::string(to_string(spec.base.run.formulation()));
  man.sweep_kind = spec.sweep_kind() == SweepKind::volume_fraction ? "volume_fraction" : "input_displacement";
  man.sweep = spec.sweep();
  man.seeds_per_point = spec.seeds_per_point();
  std::map<std::string, std::optional<double>> old_wall;
  if (fs::exists(spec.output_dir / "manifest")) {
    try {
      for (const auto& e : load_manifest(spec.output_dir).runs) old_wall[e.run_id] = e.wall_time;
    } catch (const std::exception&) {
      // Rebuilt from the run records below.
    }
  }
  std::map<std::string, std::size_t> slot;
  std::vector<std::size_t> pending;
  for (const CampaignJob& j : jobs) {
    ManifestEntry e;
    e.run_id = j.run_id;
    e.sweep_value = j.sweep_value;
    e.seed = j.config.run.seed;
    if (auto it = done.find(j.run_id); it != done.end()) {
      const RunRecord& r = it->second;
      e.status = r.status;
      e.error = r.error;
      e.mean_output_disp = r.mean_output_disp;
      e.total_strain_energy = r.total_strain_energy;
      e.converged = r.converged;
      e.iterations = r.iterations;
      e.wall_time = old_wall[j.run_id];
    } else {
      e.status = "pending";
      pending.push_back(man.runs.size());
    }
    slot[e.run_id] = man.runs.size();
    man.runs.push_back(std::move(e));
  }

  auto write_manifest = [&] {
    detail::refresh_front(man);
    write_file_atomic(spec.output_dir / "manifest", manifest_to_json(man).dump(1) + "\n");
  };
  write_manifest();

  struct Finished {
    std::size_t job;
    RunResult result;
    std::shared_ptr<Mesh> mesh;
  };
  detail::Channel<std::optional<Finished>> channel;
  std::atomic<std::size_t> next{0};
  std::atomic<int> finished{0};
  const int budget = spec.max_new_runs.value_or(std::numeric_limits<int>::max());
  auto should_stop = [&] {
    return (stop != nullptr && stop->load()) || finished.load() >= budget;
  };

  const int nworkers = std::max(1, std::min<int>(spec.parallelism(), static_cast<int>(pending.size())));
  {
    std::vector<std::jthread> workers;
    std::atomic<int> dispatched{0};
    for (int w = 0; w < nworkers && !pending.empty(); ++w) {
      workers.emplace_back([&] {
        for (;;) {
          if (should_stop()) break;
          // Never hand out more jobs than the remaining budget.
          if (dispatched.fetch_add(1) >= budget) break;
          const std::size_t k = next.fetch_add(1);
          if (k >= pending.size()) break;
          const std::size_t idx = pending[k];
          const CampaignJob& job = jobs[idx];
          Finished f{idx, {}, nullptr};
          try {
            const Problem prob(job.config.run);
            f.result = run(job.config.run, prob);
            f.mesh = std::make_shared<Mesh>(prob.mesh);
          } catch (const Error& e) {
            f.result.config = job.config.run;
            f.result.failed = true;
            f.result.error = e.what();
          }
          f.result.run_id = job.run_id;
          finished.fetch_add(1);
          channel.push(std::move(f));
        }
        channel.push(std::nullopt);
      });
    }
    int open = static_cast<int>(workers.size());
    while (open > 0) {
      std::optional<Finished> msg = channel.pop();
      if (!msg) {
        --open;
        continue;
      }
      const CampaignJob& job = jobs[msg->job];
      persist_run(spec.output_dir, job.config, msg->result, job.sweep_value, msg->mesh.get());
      const RunRecord rec = make_record(msg->result, job.sweep_value);
      ManifestEntry& e = man.runs[slot[job.run_id]];
      e.status = rec.status;
      e.error = rec.error;
      e.mean_output_disp = rec.mean_output_disp;
      e.total_strain_energy = rec.total_strain_energy;
      e.converged = rec.converged;
      e.iterations = rec.iterations;
      e.wall_time = msg->result.wall_time;
      ++man.executed_this_session;
      write_manifest();
      if (progress) progress(job.run_id, e.status, man.executed_this_session);
    }
  }
  write_manifest();
  return man;
}

}  // namespace softfinger
