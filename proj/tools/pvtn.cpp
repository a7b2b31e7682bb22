// SPDX-License-Identifier: Apache-2.0
// Command line front end: scenario runner, snapshot inspection, offline
// chain verification, and key-visibility audit.
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pvtn/scenario.hpp"
#include "pvtn/tenancy.hpp"

namespace {

int fail_parse(const std::string& msg) {
  std::cerr << "parse error: " << msg << "\n";
  return 2;
}

std::optional<std::string> slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

// First differing line, one-line context each side.
void print_diff(const std::string& want, const std::string& got) {
  std::istringstream ws(want), gs(got);
  std::string wline, gline;
  std::size_t line = 0;
  while (true) {
    bool wok = static_cast<bool>(std::getline(ws, wline));
    bool gok = static_cast<bool>(std::getline(gs, gline));
    line += 1;
    if (!wok && !gok) return;
    if (wok != gok || wline != gline) {
      std::cerr << "first difference at line " << line << ":\n";
      std::cerr << "  golden: " << (wok ? wline : "<end of file>") << "\n";
      std::cerr << "  actual: " << (gok ? gline : "<end of file>") << "\n";
      return;
    }
  }
}

int cmd_run(const std::string& scenario, pvtn::RunOptions opt,
            const std::string& golden, bool bless) {
  pvtn::RunResult r = pvtn::run_scenario_file(scenario, opt);
  if (r.exit_code == 2) return fail_parse(r.message);
  if (r.exit_code != 0) {
    std::cerr << "assertion failure:\n" << r.message;
    return 1;
  }
  if (!golden.empty()) {
    if (bless) {
      std::ofstream f(golden);
      if (!f) {
        std::cerr << golden << ": cannot write\n";
        return 2;
      }
      f << r.trace_text;
      std::cout << "blessed " << golden << "\n";
    } else {
      auto want = slurp(golden);
      if (!want) return fail_parse(golden + ": cannot open");
      if (*want != r.trace_text) {
        std::cerr << "trace diverges from " << golden << "\n";
        print_diff(*want, r.trace_text);
        return 1;
      }
    }
  }
  std::cout << "ok: " << r.assertions << " assertions, "
            << (golden.empty() ? "no golden" : "golden matched") << "\n";
  return 0;
}

void print_subtree(const pvtn::World& w, const pvtn::NodeRecord& rec,
                   int indent) {
  std::cout << std::string(indent, ' ') << rec.name << " ["
            << pvtn::role_name(rec.role) << "] id=" << rec.node_id.hex8();
  if (rec.revoked) std::cout << " REVOKED";
  std::cout << "\n";
  // Children in deterministic key order, resolved back to records.
  for (const auto& [pk, role] : rec.children) {
    for (const auto& [id, child] : w.nodes) {
      if (child.keys.pk == pk && child.parent &&
          *child.parent == rec.keys.pk) {
        print_subtree(w, child, indent + 2);
        break;
      }
    }
  }
}

int cmd_dump_tree(const std::string& path) {
  auto text = slurp(path);
  if (!text) return fail_parse(path + ": cannot open");
  auto loaded = pvtn::world_from_json(*text, path);
  if (!loaded.ok()) return fail_parse(path + ": not a world snapshot");
  const pvtn::World& w = loaded.value().world;
  for (const auto& [tid, info] : w.tenants) {
    std::cout << "tenant " << info.name << " (" << tid.hex8() << ") mode="
              << (info.mode == pvtn::DelegationMode::FullPath ? "full-path"
                                                              : "hierarchical");
    if (info.gateway) {
      const pvtn::NodeRecord* gw = w.find(*info.gateway);
      std::cout << " gateway=" << (gw ? gw->name : "?");
    }
    std::cout << "\n";
    const pvtn::NodeRecord* root = w.find(info.root_endpoint);
    if (root) print_subtree(w, *root, 2);
  }
  for (const auto& [id, st] : w.storages)
    std::cout << "storage " << st.name << " grants=" << st.grants.size()
              << "\n";
  for (const auto& b : w.bridges)
    std::cout << "bridge issuer=" << b.issuer_digest.hex8() << " scope="
              << b.scope << "\n";
  std::cout << "nodes=" << w.nodes.size() << " storages=" << w.storages.size()
            << " bridges=" << w.bridges.size() << "\n";
  return 0;
}

int cmd_verify_chain(const std::string& certs_path,
                     const std::string& anchor_path) {
  auto certs = slurp(certs_path);
  if (!certs) return fail_parse(certs_path + ": cannot open");
  auto anchor = slurp(anchor_path);
  if (!anchor) return fail_parse(anchor_path + ": cannot open");
  std::string detail;
  pvtn::Status s = pvtn::verify_chain_files(*certs, *anchor, &detail);
  if (s.ok()) {
    std::cout << "ok: " << detail << "\n";
    return 0;
  }
  if (s.error() == pvtn::Err::ParseError) return fail_parse(detail);
  std::cerr << "invalid: " << detail << "\n";
  return 1;
}

int cmd_isolation_check(const std::string& path) {
  auto text = slurp(path);
  if (!text) return fail_parse(path + ": cannot open");
  auto loaded = pvtn::world_from_json(*text, path);
  if (!loaded.ok()) return fail_parse(path + ": not a world snapshot");
  pvtn::IsolationReport report =
      pvtn::check_isolation(loaded.value().world, nullptr);
  std::cout << report.text();
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"private virtual tree network simulator"};
  app.require_subcommand(1);

  std::string scenario, golden, trace_path, snapshot_path, provider;
  std::uint64_t seed = 0;
  std::int64_t max_ticks = 0;
  bool bless = false;
  auto* run = app.add_subcommand("run", "execute a scenario file");
  run->add_option("scenario", scenario, "scenario JSON")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--provider", provider, "crypto provider (real|mock)");
  run->add_option("--trace", trace_path, "write the rendered trace here");
  run->add_option("--max-ticks", max_ticks, "override the tick budget");
  run->add_option("--snapshot", snapshot_path, "write a world snapshot here");
  run->add_option("--golden", golden, "compare the trace against this file");
  run->add_flag("--bless", bless, "rewrite the golden instead of comparing");

  std::string dump_path;
  auto* dump = app.add_subcommand("dump-tree", "render a world snapshot");
  dump->add_option("snapshot", dump_path, "world snapshot JSON")->required();

  std::string certs_path, anchor_path;
  auto* verify =
      app.add_subcommand("verify-chain", "verify an exported chain offline");
  verify->add_option("certs", certs_path, "chain JSON")->required();
  verify->add_option("anchor", anchor_path, "anchor JSON")->required();

  std::string iso_path;
  auto* iso = app.add_subcommand("isolation-check",
                                 "audit key visibility in a snapshot");
  iso->add_option("snapshot", iso_path, "world snapshot JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run->parsed()) {
    pvtn::RunOptions opt;
    if (run->count("--seed")) opt.seed = seed;
    if (run->count("--provider")) opt.provider = provider;
    if (run->count("--max-ticks")) opt.max_ticks = max_ticks;
    opt.trace_path = trace_path;
    opt.snapshot_path = snapshot_path;
    return cmd_run(scenario, opt, golden, bless);
  }
  if (dump->parsed()) return cmd_dump_tree(dump_path);
  if (verify->parsed()) return cmd_verify_chain(certs_path, anchor_path);
  return cmd_isolation_check(iso_path);
}
