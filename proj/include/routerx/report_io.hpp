#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "routerx/curve.hpp"
#include "routerx/metrics.hpp"
#include "routerx/probe.hpp"

namespace routerx {

/// Rendering of an undefined metric cell in CSV.
inline constexpr const char* kUndefinedCell = "—";

struct DatasetSummary {
  std::string name;
  std::size_t records = 0;
  std::size_t dropped_records = 0;
  std::size_t dropped_states = 0;
  std::size_t dropped_tokens = 0;
  std::size_t delta_large_defaulted = 0;
};

/// Columns: router,dataset,in_domain,auroc,lpm,mpm,d2,hcr,skipped. Cells come
/// first, then AVG_ID / AVG_OOD rows per router.
void write_report_csv(const MetricReport& report, std::ostream& out);

/// Undefined cells serialize as null with a reason alongside.
void write_report_json(const MetricReport& report, const std::vector<DatasetSummary>& datasets,
                       std::ostream& out);

/// Knots only, header call_rate,performance.
void write_curve_csv(const CurvePoints& curve, std::ostream& out);
void write_curve_sidecar(const CurvePoints& curve, const std::string& scorer,
                         const std::string& dataset, std::ostream& out);

/// Header layer,weight.
void write_layer_weights_csv(const std::vector<LayerWeight>& weights, std::ostream& out);

}  // namespace routerx
