// Generate two synthetic camera views, learn a metric on half of the
// identities and report CMC on the other half.

#include <iostream>
#include <unordered_set>

#include "xqreid/xqreid.hpp"

int main() {
  using namespace xqreid;

  synth::CrossViewParams params;
  params.n_ids = 200;
  params.dim = 32;
  params.images_per_view = 2;
  params.view_noise = 0.3;
  params.seed = 7;
  const auto views = synth::gen_cross_view(params);

  ExperimentConfig config;
  config.k = 5;
  config.invert_quotient = true;
  config.normalization_axis = NormalizationAxis::PerGalleryColumn;
  const auto report = run_experiment(ExperimentData{"quickstart", views.view_a, views.view_b, std::nullopt}, config);

  std::cout << format_report_text(report);
  return 0;
}
