#pragma once

#include <string>
#include <vector>

#include "statctrl/control.hpp"
#include "statctrl/ensemble.hpp"
#include "statctrl/inversion.hpp"
#include "statctrl/response.hpp"
#include "statctrl/types.hpp"

namespace statctrl {

/// Shortest decimal form that parses back to the same bits.
std::string format_double(double x);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// CSV layout: '.' decimal, ',' separator, header row, one time point per row.
// Mode columns are numbered from 1.
void write_moment_series_csv(const std::string& path, const MomentSeries& s);
void write_covariance_csv(const std::string& path, const MomentSeries& s);
void write_control_csv(const std::string& path, const ControlSolution& c);
void write_forcing_csv(const std::string& path, const ForcingSolution& f);
void write_empirical_control_csv(const std::string& path, const UniformGrid& grid,
                                 const std::vector<Vec>& C);
void write_inversion_diagnostics(const std::string& path, const InversionDiagnostics& d);

/// Kernel store: response_meta.json plus response_mean.csv / response_cov.csv
/// under `dir`. Values round-trip bit-exactly through the CSV text.
void save_kernels(const std::string& dir, const ResponseKernels& k);
ResponseKernels load_kernels(const std::string& dir);

}  // namespace statctrl
