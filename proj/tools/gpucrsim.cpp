// Command-line front end: checkpoint, restore and migrate simulated GPU
// processes, inspect images, and run benchmark scenarios. All stdout output
// is machine-parseable JSON/CSV; diagnostics go to stderr.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gpucrsim/gpucrsim.hpp"

namespace gc = gpucrsim;

namespace {

gc::SimConfig load_config(const std::string& path) {
  if (!path.empty()) return gc::SimConfig::load_file(path);
  if (const char* env = std::getenv("GPUCRSIM_CONFIG")) return gc::SimConfig::load_file(env);
  return gc::SimConfig{};
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gc::SimError(gc::Errc::InvalidArgument, "cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gc::SimError(gc::Errc::InvalidArgument, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

gc::CrMode parse_ckpt_mode(const std::string& m) {
  if (m == "cow") return gc::CrMode::CowCheckpoint;
  if (m == "dirty") return gc::CrMode::DirtyBitCheckpoint;
  if (m == "stw") return gc::CrMode::StopTheWorld;
  throw CLI::ValidationError("--mode", "expected cow|dirty|stw");
}

// Sweep override: tolerate short key names for config fields.
void apply_override(nlohmann::json& scenario, const std::string& key, const std::string& value) {
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (...) {
    v = value;
  }
  nlohmann::json cfg = gc::SimConfig{}.to_json();
  auto try_section = [&](const char* section, const nlohmann::json& known) {
    for (auto it = known.begin(); it != known.end(); ++it) {
      if (it.key() == key || it.key() == key + "_frac" || it.key() == key + "_ns") {
        scenario[section][it.key()] = v;
        return true;
      }
    }
    return false;
  };
  if (try_section("config", cfg)) return;
  nlohmann::json wl = gc::WorkloadProfile{}.to_json();
  if (scenario.contains("workload") && scenario["workload"].is_string()) {
    // Expand a named profile so field overrides can land on it.
    scenario["workload"] =
        gc::profile_by_name(scenario["workload"].get<std::string>()).to_json();
  }
  if (try_section("workload", wl)) return;
  scenario[key] = v;
}

int cmd_ckpt(const std::string& trace_path, uint64_t at, const std::string& mode,
             const std::string& out, const std::string& config) {
  gc::SimConfig cfg = load_config(config);
  auto trace = gc::read_trace_file(trace_path);
  auto [img, metrics] = gc::checkpoint_at(trace, at, parse_ckpt_mode(mode), cfg);
  write_file(out, gc::write_image(img));
  std::cout << metrics.to_json().dump() << "\n";
  return 0;
}

int cmd_restore(const std::string& image_path, const std::string& mode, uint32_t pool,
                const std::string& config) {
  gc::SimConfig cfg = load_config(config);
  gc::CheckpointImage img = gc::read_image(read_file(image_path));
  gc::RestoreKind kind =
      mode == "full" ? gc::RestoreKind::Full : gc::RestoreKind::OnDemand;
  if (mode != "full" && mode != "ondemand")
    throw CLI::ValidationError("--mode", "expected ondemand|full");
  gc::CrMetrics metrics;
  gc::restore_state(img, cfg, kind, &metrics, pool);
  std::cout << metrics.to_json().dump() << "\n";
  return 0;
}

int cmd_migrate(const std::string& trace_path, uint64_t at, uint64_t net_bw,
                const std::string& config) {
  gc::SimConfig cfg = load_config(config);
  if (net_bw != 0) cfg.network_bw = net_bw;
  auto trace = gc::read_trace_file(trace_path);
  auto res = gc::run_migration(trace, at, cfg, gc::CrMode::DirtyBitCheckpoint,
                               cfg.context_pool_size);
  if (!res.oracle_ok) throw gc::SimError(gc::Errc::OracleMismatch, "migration final state");
  nlohmann::json j = res.source.to_json();
  j["peer"] = res.peer.to_json();
  j["total_ns"] = res.total_ns;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_bench(const std::string& scenario_path, const std::string& sweep,
              const std::string& csv_out) {
  std::ifstream in(scenario_path);
  if (!in) throw gc::SimError(gc::Errc::InvalidArgument, "cannot read " + scenario_path);
  nlohmann::json sj;
  in >> sj;

  std::string key;
  std::vector<std::string> values;
  if (!sweep.empty()) {
    auto eq = sweep.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--sweep", "expected key=a,b,c");
    key = sweep.substr(0, eq);
    std::stringstream ss(sweep.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) values.push_back(tok);
  } else {
    values.push_back("");
  }

  std::ostringstream csv;
  csv << "sweep_key,sweep_value,mode,stall_ns,downtime_ns,bytes_precopy,bytes_dirty,"
         "bytes_dedup_saved,cow_copies,validation_failures,image_bytes,"
         "restore_first_kernel_ns,pos_total_ns,base_total_ns,oracle_ok\n";
  nlohmann::json all = nlohmann::json::array();
  for (const auto& v : values) {
    nlohmann::json cell = sj;
    if (!key.empty()) apply_override(cell, key, v);
    gc::Scenario s = gc::Scenario::from_json(cell);
    gc::ScenarioReport rep = gc::run_scenario(s);
    nlohmann::json row = rep.to_json();
    row["sweep_key"] = key;
    row["sweep_value"] = v;
    all.push_back(row);
    const auto& m = rep.pos;
    csv << key << ',' << v << ',' << m.value("mode", "") << ',' << m.value("stall_ns", 0ull)
        << ',' << m.value("downtime_ns", 0ull) << ',' << m.value("bytes_precopy", 0ull) << ','
        << m.value("bytes_dirty", 0ull) << ',' << m.value("bytes_dedup_saved", 0ull) << ','
        << m.value("cow_copies", 0ull) << ',' << m.value("validation_failures", 0ull) << ','
        << m.value("image_bytes", 0ull) << ',' << m.value("restore_first_kernel_ns", 0ull)
        << ',' << rep.pos_total_ns << ',' << rep.base_total_ns << ','
        << (rep.oracle_ok ? 1 : 0) << "\n";
  }
  if (!csv_out.empty()) {
    std::ofstream out(csv_out);
    out << csv.str();
  }
  std::cout << all.dump() << "\n";
  return 0;
}

int cmd_inspect(const std::string& image_path) {
  gc::CheckpointImage img = gc::read_image(read_file(image_path));
  uint64_t inline_bytes = 0, dedup_saved = 0, recompute_saved = 0;
  uint64_t n_inline = 0, n_dedup = 0, n_recompute = 0;
  for (const auto& r : img.gpu_records) {
    const gc::AllocEntry* a = img.find_alloc(r.handle);
    switch (r.kind) {
      case gc::GpuRecordKind::Inline:
        inline_bytes += r.inline_bytes.size();
        ++n_inline;
        break;
      case gc::GpuRecordKind::DedupRef:
        dedup_saved += a ? a->size : 0;
        ++n_dedup;
        break;
      case gc::GpuRecordKind::Recompute:
        recompute_saved += a ? a->size : 0;
        ++n_recompute;
        break;
    }
  }
  size_t dag_kernels = 0;
  size_t dag_nodes = 0;
  if (!img.dag_bytes.empty()) {
    gc::KernelDag dag = gc::KernelDag::deserialize(img.dag_bytes);
    dag_kernels = dag.kernel_count();
    dag_nodes = dag.node_count();
  }
  uint64_t buffer_bytes = 0;
  for (const auto& a : img.meta.allocs) buffer_bytes += a.size;
  nlohmann::json j{
      {"page_size", img.page_size},
      {"host_pages", img.host_pages.size()},
      {"host_bytes", img.host_pages.size() * img.page_size},
      {"gpu_records", img.gpu_records.size()},
      {"gpu_inline_records", n_inline},
      {"gpu_dedup_records", n_dedup},
      {"gpu_recompute_records", n_recompute},
      {"gpu_inline_bytes", inline_bytes},
      {"buffer_bytes_total", buffer_bytes},
      {"dedup_saved_bytes", dedup_saved},
      {"recompute_saved_bytes", recompute_saved},
      {"dag_bytes", img.dag_bytes.size()},
      {"dag_kernel_nodes", dag_kernels},
      {"dag_node_count", dag_nodes},
      {"gpu_image_bytes", img.gpu_image_bytes()},
      {"accounted_size", img.accounted_size()},
      {"cursor", img.meta.cursor},
      {"streams", img.meta.stream_ids.size()},
  };
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated GPU process checkpoint/restore"};
  app.require_subcommand(1);

  std::string trace_path, image_path, out_path, config_path, mode, scenario_path, sweep, csv_out;
  uint64_t at = 0, net_bw = 0;
  uint32_t pool = 2;

  auto* ckpt = app.add_subcommand("ckpt", "checkpoint a trace-driven process");
  ckpt->add_option("--trace", trace_path)->required();
  ckpt->add_option("--at", at, "trigger trace sequence number")->required();
  ckpt->add_option("--mode", mode, "cow|dirty|stw")->required();
  ckpt->add_option("--out", out_path)->required();
  ckpt->add_option("--config", config_path);

  auto* restore = app.add_subcommand("restore", "restore a process from an image");
  restore->add_option("--image", image_path)->required();
  restore->add_option("--mode", mode, "ondemand|full")->required();
  restore->add_option("--pool", pool, "context pool size");
  restore->add_option("--config", config_path);

  auto* migrate = app.add_subcommand("migrate", "live-migrate at a trigger point");
  migrate->add_option("--trace", trace_path)->required();
  migrate->add_option("--at", at)->required();
  migrate->add_option("--net-bw", net_bw, "network bytes/s override");
  migrate->add_option("--config", config_path);

  auto* bench = app.add_subcommand("bench", "run a scenario file");
  bench->add_option("--scenario", scenario_path)->required();
  bench->add_option("--sweep", sweep, "key=a,b,c");
  bench->add_option("--csv", csv_out);

  auto* inspect = app.add_subcommand("inspect", "describe an image file");
  inspect->add_option("--image", image_path)->required();

  try {
    app.parse(argc, argv);
    if (ckpt->parsed()) return cmd_ckpt(trace_path, at, mode, out_path, config_path);
    if (restore->parsed()) return cmd_restore(image_path, mode, pool, config_path);
    if (migrate->parsed()) return cmd_migrate(trace_path, at, net_bw, config_path);
    if (bench->parsed()) return cmd_bench(scenario_path, sweep, csv_out);
    if (inspect->parsed()) return cmd_inspect(image_path);
    return 1;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const gc::SimError& e) {
    std::cerr << e.what() << "\n";
    if (e.code() == gc::Errc::CorruptImage || e.code() == gc::Errc::CorruptDag) return 2;
    if (e.code() == gc::Errc::OracleMismatch) return 3;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
