#include "routerx/report_io.hpp"

#include <ostream>

#include <json.hpp>

#include "routerx/format.hpp"

namespace routerx {
namespace {

using Json = nlohmann::ordered_json;

// Quotes a text field when it would otherwise break the row.
std::string field(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string cell(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string(kUndefinedCell);
}

Json maybe(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json average_json(const Average& a) {
  return Json{{"value", maybe(a.value)}, {"included", a.included}, {"skipped", a.skipped}};
}

void average_row(std::ostream& out, const std::string& router, const char* label, bool in_domain,
                 const Average& auroc, const Average& lpm, const Average& mpm,
                 const Average& hcr) {
  if (auroc.included + auroc.skipped == 0) return;
  out << field(router) << ',' << label << ',' << (in_domain ? "true" : "false") << ','
      << cell(auroc.value) << ',' << cell(lpm.value) << ',' << cell(mpm.value) << ','
      << kUndefinedCell << ',' << cell(hcr.value) << ','
      << (auroc.skipped + lpm.skipped + mpm.skipped + hcr.skipped) << '\n';
}

}  // namespace

void write_report_csv(const MetricReport& report, std::ostream& out) {
  out << "router,dataset,in_domain,auroc,lpm,mpm,d2,hcr,skipped\n";
  for (const auto& c : report.cells) {
    out << field(c.router) << ',' << field(c.dataset) << ',' << (c.in_domain ? "true" : "false") << ','
        << format_number(c.auroc) << ',' << format_number(c.lpm) << ',' << cell(c.mpm.value)
        << ',' << cell(c.d2) << ',' << cell(c.hcr.value) << ",\n";
  }
  for (const auto& a : report.averages) {
    average_row(out, a.router, "AVG_ID", true, a.auroc_id, a.lpm_id, a.mpm_id, a.hcr_id);
    average_row(out, a.router, "AVG_OOD", false, a.auroc_ood, a.lpm_ood, a.mpm_ood, a.hcr_ood);
  }
}

void write_report_json(const MetricReport& report, const std::vector<DatasetSummary>& datasets,
                       std::ostream& out) {
  Json doc;
  doc["scenario"] = Json{{"d1", report.scenario.d1},
                         {"rho1", report.scenario.rho1},
                         {"rho2", report.scenario.rho2}};
  Json ds = Json::array();
  for (const auto& d : datasets) {
    ds.push_back(Json{{"name", d.name},
                      {"records", d.records},
                      {"dropped_records", d.dropped_records},
                      {"dropped_states", d.dropped_states},
                      {"dropped_tokens", d.dropped_tokens},
                      {"delta_large_defaulted", d.delta_large_defaulted}});
  }
  doc["datasets"] = std::move(ds);
  Json cells = Json::array();
  for (const auto& c : report.cells) {
    Json j{{"router", c.router},
           {"dataset", c.dataset},
           {"in_domain", c.in_domain},
           {"auroc", c.auroc},
           {"lpm", c.lpm},
           {"mpm", maybe(c.mpm.value)},
           {"d2", maybe(c.d2)},
           {"hcr", maybe(c.hcr.value)}};
    if (!c.mpm.value) j["mpm_reason"] = c.mpm.reason;
    if (!c.hcr.value) j["hcr_reason"] = c.hcr.reason;
    cells.push_back(std::move(j));
  }
  doc["cells"] = std::move(cells);
  Json avgs = Json::array();
  for (const auto& a : report.averages) {
    avgs.push_back(Json{{"router", a.router},
                        {"in_domain",
                         Json{{"auroc", average_json(a.auroc_id)},
                              {"lpm", average_json(a.lpm_id)},
                              {"mpm", average_json(a.mpm_id)},
                              {"hcr", average_json(a.hcr_id)}}},
                        {"out_of_domain",
                         Json{{"auroc", average_json(a.auroc_ood)},
                              {"lpm", average_json(a.lpm_ood)},
                              {"mpm", average_json(a.mpm_ood)},
                              {"hcr", average_json(a.hcr_ood)}}}});
  }
  doc["averages"] = std::move(avgs);
  out << doc.dump(2) << '\n';
}

void write_curve_csv(const CurvePoints& curve, std::ostream& out) {
  out << "call_rate,performance\n";
  for (const auto& k : curve.points) {
    out << format_number(k.call_rate, 17) << ',' << format_number(k.performance, 17) << '\n';
  }
}

void write_curve_sidecar(const CurvePoints& curve, const std::string& scorer,
                         const std::string& dataset, std::ostream& out) {
  out << Json{{"scorer", scorer},
              {"dataset", dataset},
              {"perf_small", curve.perf_small},
              {"perf_large", curve.perf_large},
              {"knots", curve.points.size()}}
             .dump(2)
      << '\n';
}

void write_layer_weights_csv(const std::vector<LayerWeight>& weights, std::ostream& out) {
  out << "layer,weight\n";
  for (const auto& w : weights) out << w.layer << ',' << format_number(w.weight, 17) << '\n';
}

}  // namespace routerx
