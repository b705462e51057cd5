// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "softfinger/campaign.hpp"
#include "softfinger/config.hpp"
#include "softfinger/pareto.hpp"
#include "softfinger/sensitivity.hpp"
#include "softfinger/verify.hpp"
#include "test_support.hpp"

using namespace sftest;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string config(const std::string& name) { return std::string(SOFTFINGER_CONFIG_DIR) + "/" + name; }

// ---------------------------------------------------------------- processes

pid_t spawn(const std::vector<std::string>& args, const fs::path& log) {
  fs::create_directories(log.parent_path());
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd >= 0) {
      ::dup2(fd, 1);
      ::dup2(fd, 2);
    }
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(SOFTFINGER_CLI));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(SOFTFINGER_CLI, argv.data());
    ::_exit(127);
  }
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run_cli_binary(const std::vector<std::string>& args, const fs::path& log) { return wait_exit(spawn(args, log)); }

/// Byte comparison of two run directories, ignoring nothing: every file must match.
bool same_tree(const fs::path& a, const fs::path& b, std::string* why) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) names.insert(e.path().filename().string());
  for (const auto& n : names) {
    if (!fs::exists(a / n) || !fs::exists(b / n)) {
      *why = n + " missing on one side";
      return false;
    }
    if (fs::is_directory(a / n)) {
      if (!same_tree(a / n, b / n, why)) return false;
    } else if (read_file(a / n) != read_file(b / n)) {
      *why = (a / n).string() + " differs";
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- criteria

Outcome gradient_check() {
  const MaterialParams mat;
  double worst = 0.0;
  std::size_t checked = 0;
  for (Formulation f : {Formulation::passive, Formulation::active}) {
    const Mesh m = build_domain(make_finger_spec(small_layout(f)));
    const ObjectiveParams obj = make_objective(m, f, 1.0, 5.0, 1e5);
    const DensityField rho = random_density(m, 2024, 0.2, 0.95);
    FemModel model(m, mat, domain_boundary_conditions(m));
    const Evaluation ev = evaluate_objective(model, rho, obj);
    const std::vector<double> g = gradient(model, rho, obj, ev);
    std::vector<int> pos = m.design_positions;
    std::mt19937_64 rng(7);
    std::shuffle(pos.begin(), pos.end(), rng);
    pos.resize(std::min<std::size_t>(50, pos.size()));
    const auto phi = [&](const DensityField& r) { return evaluate_objective(m, r, mat, obj).breakdown.total_phi; };
    for (int p : pos) {
      const auto a = static_cast<std::size_t>(p);
      DensityField hi = rho;
      DensityField lo = rho;
      hi.rho[a] += 1e-6;
      lo.rho[a] -= 1e-6;
      const double fd = (phi(hi) - phi(lo)) / 2e-6;
      worst = std::max(worst, std::abs(g[a] - fd) / std::max(std::abs(fd), 1e-30));
      ++checked;
    }
  }
  return {checked == 100 && worst < 1e-3,
          num(checked, 6) + " elements over both formulations, worst relative error " + num(worst)};
}

Outcome oracle_check() {
  double elem = 0.0;
  for (double nu : {0.0, 0.25, 0.3, 0.45}) {
    const Matrix8 k = reference_element_stiffness(nu);
    elem = std::max({elem, (k - gauss3_element(1.0, nu, 1.0, 1.0)).cwiseAbs().maxCoeff(),
                     (k - closed_form_element(nu)).cwiseAbs().maxCoeff()});
  }
  const MaterialParams mat;
  double assembly = 0.0;
  double energy = 0.0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Formulation f : {Formulation::passive, Formulation::active}) {
    const Mesh m = build_domain(make_finger_spec(small_layout(f)));
    for (int trial = 0; trial < 5; ++trial) {
      const DensityField rho = random_density(m, 31 + static_cast<std::uint64_t>(trial));
      FemModel model(m, mat, domain_boundary_conditions(m));
      model.assemble(rho);
      const Eigen::MatrixXd K = dense_global(m, rho, mat);
      const Eigen::MatrixXd Kff(model.reduced_matrix());
      const auto& fdofs = model.free_dofs();
      double diff = 0.0;
      double scale = 0.0;
      for (std::size_t i = 0; i < fdofs.size(); ++i) {
        for (std::size_t j = 0; j < fdofs.size(); ++j) {
          diff = std::max(diff, std::abs(Kff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -
                                         K(fdofs[i], fdofs[j])));
          scale = std::max(scale, std::abs(K(fdofs[i], fdofs[j])));
        }
      }
      assembly = std::max(assembly, diff / scale);
      Eigen::VectorXd fv = Eigen::VectorXd::Zero(m.dof_count);
      for (int d : fdofs) fv[d] = u(rng);
      const Eigen::VectorXd x = model.solve_full(fv, Eigen::VectorXd::Zero(m.dof_count));
      const double E = model.strain_energy(x);
      energy = std::max(energy, std::abs(E - fv.dot(x)) / E);
    }
  }
  return {elem < 1e-12 && assembly < 1e-9 && energy < 1e-8,
          "element " + num(elem) + ", assembly " + num(assembly) + ", energy identity " + num(energy)};
}

Outcome beam_check() {
  const double coarse = cantilever_error(1);
  const double fine = cantilever_error(2);
  return {fine < coarse && fine < 0.15, "tip deflection error " + num(coarse) + " -> " + num(fine)};
}

struct Regression {
  std::string name;
  std::string file;
  std::vector<std::string> overrides;
};

Outcome optimizer_contract(const fs::path& work) {
  const std::vector<Regression> regs = {
      {"small_passive", "small_passive.cfg", {}},
      {"small_active", "small_active.cfg", {}},
      {"desk_passive", "desk_passive.cfg", {"seed=0"}},
      {"desk_active", "desk_active.cfg", {"x_in=15"}},
  };
  std::ostringstream detail;
  bool ok = true;
  for (const auto& reg : regs) {
    AppConfig cfg = load_config_file(config(reg.file));
    for (const auto& ov : reg.overrides) apply_override(cfg, ov);
    const RunConfig& rc = cfg.run;
    bool feasible = true;
    bool bounded = true;
    const Problem prob(rc);
    const RunResult res = run(rc, prob, [&](const HistoryRow& h, const DensityField& rho) {
      feasible = feasible && h.volume_fraction <= rc.volume_fraction + 1e-4;
      for (double v : rho.rho) bounded = bounded && v >= 0.0 && v <= 1.0;
    });
    if (res.failed) {
      ok = false;
      detail << reg.name << ": failed (" << res.error << "); ";
      continue;
    }
    std::size_t windows = 0;
    std::size_t down = 0;
    const double tol = 1e-12 * std::abs(res.history.front().phi);
    for (std::size_t k = 0; k + 10 < res.history.size(); ++k) {
      ++windows;
      down += res.history[k + 10].phi <= res.history[k].phi + tol;
    }
    const double share = windows ? static_cast<double>(down) / static_cast<double>(windows) : 1.0;

    // Two separate executions of the binary must agree byte for byte with each other.
    std::vector<std::string> args = {"optimize", "-c", config(reg.file), "--log-level", "error"};
    for (const auto& ov : reg.overrides) {
      args.push_back("--override");
      args.push_back(ov);
    }
    const fs::path a = work / "determinism" / reg.name / "a";
    const fs::path b = work / "determinism" / reg.name / "b";
    fs::remove_all(a);
    fs::remove_all(b);
    auto with_out = [&](const fs::path& o) {
      auto v = args;
      v.push_back("-o");
      v.push_back(o.string());
      return v;
    };
    const fs::path log = work / "determinism" / (reg.name + ".log");
    const bool ran = run_cli_binary(with_out(a), log) == 0 && run_cli_binary(with_out(b), log) == 0;
    std::string why;
    const bool same = ran && same_tree(a, b, &why);
    // ...and with the in-process run.
    const std::string id = make_run_id(cfg.sweep_kind(), cfg.sweep_kind() == SweepKind::volume_fraction ? rc.volume_fraction : *rc.x_in, rc.seed);
    const bool same_inproc = same && read_file(a / "runs" / id / "history.csv") == history_csv(res.history);

    const bool pass = feasible && bounded && share >= 0.9 && same && same_inproc;
    ok = ok && pass;
    detail << reg.name << ": " << res.history.size() << " iterates, feasible " << feasible << ", bounded " << bounded
           << ", descending windows " << num(100.0 * share, 3) << "%, repeatable " << (same && same_inproc)
           << (why.empty() ? "" : " (" + why + ")") << "; ";
  }

  // Campaign output must not depend on the worker count.
  for (const char* file : {"small_passive.cfg", "desk_active.cfg"}) {
    const std::string stem = fs::path(file).stem().string();
    const fs::path p1 = work / "parallel" / (stem + "_j1");
    const fs::path p4 = work / "parallel" / (stem + "_j4");
    fs::remove_all(p1);
    fs::remove_all(p4);
    const fs::path log = work / "parallel" / (stem + ".log");
    fs::create_directories(log.parent_path());
    const std::vector<std::string> base = {"sweep", "-c", config(file), "--override", "seeds_per_point=2", "--log-level", "error"};
    auto args = [&](const fs::path& o, const char* j) {
      auto v = base;
      v.insert(v.end(), {"-o", o.string(), "-j", j});
      return v;
    };
    const bool ran = run_cli_binary(args(p1, "1"), log) == 0 && run_cli_binary(args(p4, "4"), log) == 0;
    std::string why;
    const bool same = ran && same_tree(p1 / "runs", p4 / "runs", &why) &&
                      load_manifest(p1).front == load_manifest(p4).front;
    ok = ok && same;
    detail << stem << " campaign -j1 vs -j4 identical " << same << (why.empty() ? "" : " (" + why + ")") << "; ";
  }
  return {ok, detail.str()};
}

/// Runs (or resumes) a desk campaign through the CLI binary and loads its records.
std::vector<RunRecord> desk_campaign(const fs::path& work, const std::string& file, int jobs) {
  const fs::path dir = work / fs::path(file).stem();
  const int code = run_cli_binary({"sweep", "-c", config(file), "-o", dir.string(), "-j", std::to_string(jobs),
                                   "--log-level", "warn"},
                                  work / (fs::path(file).stem().string() + ".log"));
  if (code != 0) throw std::runtime_error("campaign " + file + " exited with " + std::to_string(code));
  return load_records(dir);
}

std::map<double, std::vector<const RunRecord*>> by_sweep(const std::vector<RunRecord>& recs) {
  std::map<double, std::vector<const RunRecord*>> g;
  for (const auto& r : recs) {
    if (r.completed()) g[r.sweep_value].push_back(&r);
  }
  return g;
}

std::map<double, double> mean_energy(const std::vector<RunRecord>& recs) {
  std::map<double, double> m;
  for (const auto& [v, rs] : by_sweep(recs)) {
    double s = 0.0;
    for (const auto* r : rs) s += r->total_strain_energy;
    m[v] = s / static_cast<double>(rs.size());
  }
  return m;
}

std::string energy_table(const std::map<double, double>& m) {
  std::string s;
  for (const auto& [v, e] : m) s += (s.empty() ? "" : ", ") + num(v) + ": " + num(e);
  return "mean strain energy {" + s + "}";
}

Outcome volume_trend(const std::vector<RunRecord>& recs) {
  const auto means = mean_energy(recs);
  bool decreasing = means.size() == 3;
  for (auto it = means.begin(); decreasing && std::next(it) != means.end(); ++it) {
    decreasing = std::next(it)->second < it->second;
  }
  const auto front = front_members(pareto_points(recs));
  std::set<double> top;
  for (auto it = means.rbegin(); it != means.rend() && top.size() < 2; ++it) top.insert(it->first);
  std::size_t from_top = 0;
  std::map<std::string, double> value_of;
  for (const auto& r : recs) value_of[r.run_id] = r.sweep_value;
  for (const auto& p : front) from_top += top.count(value_of[p.run_id]);
  const double share = front.empty() ? 0.0 : static_cast<double>(from_top) / static_cast<double>(front.size());
  std::size_t completed = 0;
  for (const auto& r : recs) completed += r.completed();
  return {completed == 30 && decreasing && share >= 0.7,
          num(completed, 3) + " runs, " + energy_table(means) + ", front " + num(front.size(), 3) +
              " members, " + num(100.0 * share, 3) + "% from the two largest V_f"};
}

Outcome input_trend(const std::vector<RunRecord>& recs) {
  const auto means = mean_energy(recs);
  bool increasing = means.size() == 3;
  for (auto it = means.begin(); increasing && std::next(it) != means.end(); ++it) {
    increasing = std::next(it)->second > it->second;
  }
  std::size_t completed = 0;
  for (const auto& r : recs) completed += r.completed();
  return {completed == 30 && increasing, num(completed, 3) + " runs, " + energy_table(means)};
}

Outcome diversity(const std::vector<RunRecord>& recs) {
  bool ok = !recs.empty();
  std::string s;
  for (const auto& [v, rs] : by_sweep(recs)) {
    std::vector<std::vector<double>> fields;
    for (const auto* r : rs) fields.push_back(r->final_rho);
    if (fields.size() < 2) {
      ok = false;
      continue;
    }
    const DiversityStats d = diversity_stats(fields);
    ok = ok && d.clusters >= 3;
    s += (s.empty() ? "" : ", ") + ("V_f " + num(v) + ": " + num(d.clusters, 3) + " clusters (min distance " +
                                    num(d.min_distance) + ", threshold " + num(d.threshold) + ")");
  }
  return {ok, s};
}

Outcome pareto_check() {
  std::mt19937_64 rng(1);
  std::size_t mismatches = 0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<ParetoPoint> pts(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid values force ties and duplicates.
      pts[i] = {"r" + std::to_string(i), static_cast<double>(rng() % 20) - 10.0, static_cast<double>(rng() % 20), false};
    }
    const auto flagged = pareto_front(pts);
    for (std::size_t i = 0; i < n; ++i) {
      bool dominated = false;
      for (std::size_t j = 0; j < n && !dominated; ++j) {
        const auto& p = pts[i];
        const auto& q = pts[j];
        const bool le = q.mean_output_disp <= p.mean_output_disp && q.total_strain_energy <= p.total_strain_energy;
        const bool lt = q.mean_output_disp < p.mean_output_disp || q.total_strain_energy < p.total_strain_energy;
        const bool dup = !lt && le && q.run_id < p.run_id;
        dominated = j != i && le && (lt || dup);
      }
      mismatches += flagged[i].dominated != dominated;
    }
  }
  return {mismatches == 0, "1000 random sets, " + num(mismatches, 6) + " disagreements with brute force"};
}

Outcome verification_battery(const std::vector<RunRecord>& finalists, const fs::path& desk_dir) {
  const MaterialParams mat;
  const auto mesh = std::make_shared<const Mesh>(build_domain(make_finger_spec(small_layout())));
  std::mt19937_64 rng(17);
  std::size_t violations = 0;
  for (int t = 0; t < 20; ++t) {
    DensityField big = solid_density(*mesh);
    DensityField small = big;
    for (int p : mesh->design_positions) {
      const bool in_big = unit_double(rng) < 0.7;
      big.rho[static_cast<std::size_t>(p)] = in_big ? 1.0 : 0.0;
      small.rho[static_cast<std::size_t>(p)] = in_big && unit_double(rng) < 0.7 ? 1.0 : 0.0;
    }
    const auto design = [&](const DensityField& r) {
      Design d;
      d.id = "pair";
      d.mesh = mesh;
      d.rho = r;
      d.bc = domain_boundary_conditions(*mesh);
      d.tip = make_selector(*mesh, "output");
      d.mid = make_selector(*mesh, "F_in3");
      return d;
    };
    violations += tip_stiffness(design(small), mat) > tip_stiffness(design(big), mat) * (1.0 + 1e-12);
  }
  double worst_volume = 0.0;
  for (int t = 0; t < 100; ++t) {
    DensityField r = solid_density(*mesh);
    for (int p : mesh->design_positions) r.rho[static_cast<std::size_t>(p)] = unit_double(rng);
    const Binarization b = binarize(*mesh, r, 0.05 + 0.9 * unit_double(rng), mesh->support_nodes, {});
    worst_volume = std::max(worst_volume, b.volume_error_elements);
  }

  std::vector<double> se;
  std::vector<double> k;
  std::shared_ptr<const Mesh> desk;
  for (const auto& r : finalists) {
    if (!r.completed()) continue;
    const AppConfig cfg = load_config_file((desk_dir / "runs" / r.run_id / "config").string());
    if (!desk) desk = std::make_shared<const Mesh>(build_domain(make_finger_spec(cfg.run.domain)));
    const Design d = make_design(r.run_id, desk, DensityField{r.final_rho}, cfg.run.formulation(), cfg.run.x_in);
    const VerificationReport rep = verify_design(d, cfg.run.material);
    if (!rep.tip_stiffness) continue;
    se.push_back(r.total_strain_energy);
    k.push_back(*rep.tip_stiffness);
  }
  const auto rho = spearman(se, k);
  return {violations == 0 && worst_volume <= 1.0 && rho.has_value(),
          "monotonicity violations " + num(violations, 3) + "/20, worst binarization volume error " +
              num(worst_volume) + " elements, spearman(strain energy, tip stiffness) = " +
              (rho ? num(*rho) : std::string("undefined")) + " over " + num(se.size(), 3) + " designs"};
}

Outcome crash_resume(const fs::path& work) {
  const fs::path ref = work / "resume" / "reference";
  const fs::path crash = work / "resume" / "crashed";
  fs::remove_all(ref);
  fs::remove_all(crash);
  fs::create_directories(work / "resume");
  const fs::path log = work / "resume" / "log";
  const std::vector<std::string> base = {"sweep", "-c", config("small_passive.cfg"), "--override", "seeds_per_point=4",
                                         "--log-level", "error", "-j", "2"};
  auto args = [&](const fs::path& o) {
    auto v = base;
    v.insert(v.end(), {"-o", o.string()});
    return v;
  };
  if (run_cli_binary(args(ref), log) != 0) return {false, "reference campaign failed"};

  const pid_t pid = spawn(args(crash), log);
  const auto deadline = Clock::now() + std::chrono::minutes(5);
  std::size_t seen = 0;
  while (Clock::now() < deadline) {
    seen = 0;
    if (fs::is_directory(crash / "runs")) {
      for (const auto& e : fs::directory_iterator(crash / "runs")) {
        seen += e.path().filename().string().front() != '.';
      }
    }
    if (seen >= 5) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ::kill(pid, SIGKILL);
  int status = 0;
  ::waitpid(pid, &status, 0);
  const bool killed = WIFSIGNALED(status);
  const Manifest mid = load_manifest(crash);
  const std::size_t done_at_kill = mid.count("completed") + mid.count("failed");

  if (run_cli_binary(args(crash), log) != 0) return {false, "resume exited with an error"};
  const Manifest a = load_manifest(ref);
  const Manifest b = load_manifest(crash);
  std::set<std::string> ids_a;
  std::set<std::string> ids_b;
  for (const auto& e : a.runs) ids_a.insert(e.run_id + ":" + e.status);
  for (const auto& e : b.runs) ids_b.insert(e.run_id + ":" + e.status);
  std::string why;
  const bool runs_same = same_tree(ref / "runs", crash / "runs", &why);
  const bool pass = killed && done_at_kill < a.runs.size() && ids_a == ids_b && a.front == b.front && runs_same;
  return {pass, std::string(killed ? "SIGKILL" : "no kill") + " after " + num(done_at_kill, 3) + " of " +
                    num(a.runs.size(), 3) + " runs, resumed " + num(b.runs.size() - done_at_kill, 3) +
                    "; run-id set equal " + std::to_string(ids_a == ids_b) + ", front equal " +
                    std::to_string(a.front == b.front) + ", run records identical " + std::to_string(runs_same) +
                    (why.empty() ? "" : " (" + why + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"softfinger acceptance suite"};
  std::string workdir = "acceptance_work";
  int jobs = 1;
  std::set<int> only;
  app.add_option("--workdir", workdir, "scratch directory (campaigns are resumed if present)");
  app.add_option("-j,--parallelism", jobs, "workers for the desk campaigns");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path work = fs::absolute(workdir);
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& check) {
    if (!only.empty() && !only.count(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << title << " (" << num(secs, 3) << " s): "
              << o.detail << std::endl;
  };

  std::vector<RunRecord> passive;
  std::vector<RunRecord> active;
  auto passive_records = [&]() -> const std::vector<RunRecord>& {
    if (passive.empty()) passive = desk_campaign(work, "desk_passive.cfg", jobs);
    return passive;
  };

  report(1, "adjoint gradient vs central differences", gradient_check);
  report(2, "FEM oracle equivalence", oracle_check);
  report(3, "cantilever convergence", beam_check);
  report(4, "optimizer contract", [&] { return optimizer_contract(work); });
  report(5, "volume-fraction trend (passive desk campaign)", [&] { return volume_trend(passive_records()); });
  report(6, "input-displacement trend (active desk campaign)", [&] {
    active = desk_campaign(work, "desk_active.cfg", jobs);
    return input_trend(active);
  });
  report(7, "multi-start diversity", [&] { return diversity(passive_records()); });
  report(8, "Pareto extraction vs brute force", pareto_check);
  report(9, "verification battery", [&] { return verification_battery(passive_records(), work / "desk_passive"); });
  report(10, "crash and resume", [&] { return crash_resume(work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
