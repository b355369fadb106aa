#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "covmt/errors.hpp"
#include "covmt/mtest.hpp"

namespace covmt {

/**
 * Parsed covariance-procedure selector, shared by the simulation lab, the
 * backtester, and the CLI. Text forms:
 *
 *   sample           raw sample covariance (about-origin moments)
 *   ls               linear shrinkage toward a scaled identity
 *   ew | vt          equal-weight / variance-targeting weight shortcuts
 *   bps:a | bps:b    universal threshold with f = N^2 or f = N(N-1)/2
 *   ss | sd          single-step / step-down multiple testing, options:
 *                      k=<int> | k=log | k=sqrt   (k-FWER, default k=1)
 *                      fdp=<gamma>                (FDP criterion)
 */
struct ProcedureSpec {
  enum class Family { Sample, Ls, Ew, Vt, BpsA, BpsB, Mt };
  enum class KRule { Fixed, Log, Sqrt };

  Family family = Family::Sample;
  mc::Mode mode = mc::Mode::StepDown;  // Mt only
  bool is_fdp = false;                 // Mt only
  KRule k_rule = KRule::Fixed;
  int k_fixed = 1;
  double gamma = 0.1;

  bool is_mt() const { return family == Family::Mt; }
  bool is_bps() const { return family == Family::BpsA || family == Family::BpsB; }
  bool needs_covariance() const { return family != Family::Ew && family != Family::Vt; }

  /// Resolve the k rule at a concrete M. Never below 1; above M is an error.
  int resolve_k(int m) const {
    int k;
    switch (k_rule) {
      case KRule::Fixed: k = k_fixed; break;
      case KRule::Log: k = static_cast<int>(std::floor(std::log(static_cast<double>(m)))); break;
      case KRule::Sqrt: k = static_cast<int>(std::floor(std::sqrt(static_cast<double>(m)))); break;
    }
    if (k < 1) k = 1;
    if (k > m)
      throw ConfigError("k = " + std::to_string(k) + " exceeds the number of hypotheses M = " +
                        std::to_string(m));
    return k;
  }

  mc::TestSpec to_test_spec(int m, double alpha, int b_total) const {
    if (!is_mt()) throw ConfigError("procedure '" + format() + "' is not a multiple-testing procedure");
    mc::TestSpec spec;
    spec.mode = mode;
    spec.alpha = alpha;
    spec.B = b_total;
    if (is_fdp)
      spec.criterion = mc::Fdp{gamma};
    else
      spec.criterion = mc::KFwer{resolve_k(m)};
    return spec;
  }

  std::string format() const {
    switch (family) {
      case Family::Sample: return "sample";
      case Family::Ls: return "ls";
      case Family::Ew: return "ew";
      case Family::Vt: return "vt";
      case Family::BpsA: return "bps:a";
      case Family::BpsB: return "bps:b";
      case Family::Mt: break;
    }
    std::string out = (mode == mc::Mode::SingleStep) ? "ss" : "sd";
    if (is_fdp) {
      char buf[48];
      std::snprintf(buf, sizeof buf, ":fdp=%g", gamma);
      out += buf;
    } else {
      switch (k_rule) {
        case KRule::Fixed: out += ":k=" + std::to_string(k_fixed); break;
        case KRule::Log: out += ":k=log"; break;
        case KRule::Sqrt: out += ":k=sqrt"; break;
      }
    }
    return out;
  }

  /// File-system friendly label: "sd:k=sqrt" -> "sd_ksqrt".
  std::string path_label() const {
    std::string raw = format();
    std::string out;
    for (char c : raw) {
      if (c == ':') out += '_';
      else if (c == '=') continue;
      else out += c;
    }
    return out;
  }

  static ProcedureSpec parse(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
      if (c == ':') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    parts.push_back(cur);
    const std::string& head = parts[0];

    ProcedureSpec spec;
    if (head == "sample") spec.family = Family::Sample;
    else if (head == "ls") spec.family = Family::Ls;
    else if (head == "ew") spec.family = Family::Ew;
    else if (head == "vt") spec.family = Family::Vt;
    else if (head == "bps") spec.family = Family::BpsA;  // variant read below
    else if (head == "ss" || head == "sd") {
      spec.family = Family::Mt;
      spec.mode = (head == "ss") ? mc::Mode::SingleStep : mc::Mode::StepDown;
      spec.is_fdp = false;
      spec.k_rule = KRule::Fixed;
      spec.k_fixed = 1;
    } else {
      throw ConfigError("unknown procedure '" + text + "'");
    }

    if (spec.family == Family::BpsA) {
      if (parts.size() != 2 || (parts[1] != "a" && parts[1] != "b"))
        throw ConfigError("universal-threshold procedure must be 'bps:a' or 'bps:b'");
      spec.family = (parts[1] == "a") ? Family::BpsA : Family::BpsB;
      return spec;
    }
    if (spec.family != Family::Mt) {
      if (parts.size() != 1)
        throw ConfigError("procedure '" + head + "' takes no options (got '" + text + "')");
      return spec;
    }

    for (std::size_t p = 1; p < parts.size(); ++p) {
      const std::string& opt = parts[p];
      const auto eq = opt.find('=');
      if (eq == std::string::npos)
        throw ConfigError("malformed option '" + opt + "' in '" + text + "'");
      const std::string key = opt.substr(0, eq);
      const std::string val = opt.substr(eq + 1);
      if (key == "k") {
        spec.is_fdp = false;
        if (val == "log") spec.k_rule = KRule::Log;
        else if (val == "sqrt") spec.k_rule = KRule::Sqrt;
        else {
          spec.k_rule = KRule::Fixed;
          try {
            std::size_t used = 0;
            spec.k_fixed = std::stoi(val, &used);
            if (used != val.size() || spec.k_fixed < 1) throw std::invalid_argument("");
          } catch (const std::exception&) {
            throw ConfigError("invalid k value '" + val + "' in '" + text + "'");
          }
        }
      } else if (key == "fdp") {
        spec.is_fdp = true;
        try {
          std::size_t used = 0;
          spec.gamma = std::stod(val, &used);
          if (used != val.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
          throw ConfigError("invalid fdp value '" + val + "' in '" + text + "'");
        }
        if (!(spec.gamma >= 0.0 && spec.gamma < 1.0))
          throw ConfigError("fdp gamma must lie in [0, 1)");
      } else {
        throw ConfigError("unknown option '" + key + "' in '" + text + "'");
      }
    }
    return spec;
  }
};

}  // namespace covmt
