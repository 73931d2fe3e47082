// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "unfold/mpnet.hpp"
#include "unfold/training.hpp"
#include "unfold/upga.hpp"

using namespace unfold;

namespace {

struct Scene {
    AntennaArray nominal = make_nominal_ula(64, wavelength_for(kDefaultCarrierHz));
    AntennaArray real = perturb_array(nominal, 0.1, 1);
    ChannelDataset ds = generate_channels(real, nominal, 64, 5, GainProfile{}, 2);
    MeasurementMatrix meas = draw_measurement_matrix(64, 16, 2, 3);
    double zeta2 = calibrate_zeta2(ds.channels, 15.0);
    Observation obs = observe_uplink(ds.channels, meas, zeta2, 4);
};

const Scene& scene()
{
    static const Scene s;
    return s;
}

void BM_MpForward(benchmark::State& state)
{
    const Scene& s = scene();
    const MpNetParams p = make_constrained_params(s.nominal, state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(estimate_channels(s.obs, p, StopRule{}));
    }
    state.SetItemsProcessed(state.iterations() * s.obs.y.cols());
}
BENCHMARK(BM_MpForward)->Arg(256)->Arg(1200)->Unit(benchmark::kMillisecond);

void BM_PgaForward(benchmark::State& state)
{
    const Scene& s = scene();
    const CMat h = s.ds.channels.leftCols(4);
    const PgaParams p = constant_step_params(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(pga_forward(h, p, 16, 4.0, s.zeta2, 7));
    }
}
BENCHMARK(BM_PgaForward)->Arg(10)->Unit(benchmark::kMicrosecond);

void BM_EstimatorBackprop(benchmark::State& state)
{
    const Scene& s = scene();
    const MpNetParams p = state.range(0) == 0 ? make_constrained_params(s.nominal, 1200)
                                              : make_unconstrained_params(s.nominal, 1200);
    const ChannelEstimates e = estimate_channels_detailed(s.obs, p, StopRule{});
    const ad::ParamSet ps = mpnet_param_set(p);
    const ad::LossFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        return loss_unsupervised(estimate_replay(t, dictionary_node(t, p, v[0]), s.obs.y, s.meas, e.supports),
                                 s.obs.y, s.meas.m);
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(ad::backprop(fn, ps));
    }
    state.SetLabel(to_string(p.variant));
}
BENCHMARK(BM_EstimatorBackprop)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_UnrollBackprop(benchmark::State& state)
{
    const Scene& s = scene();
    const CMat h = s.ds.channels.leftCols(4);
    const HybridPrecoder init = init_precoders(h, 16, 4.0, 5);
    ad::ParamSet ps;
    ps.add("mu", constant_step_params(10).mu.cast<cplx>(), true);
    const ad::LossFn fn = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
        return pga_rate_loss(pga_unroll(t, t.constant(h), v[0], init, s.zeta2), t.constant(h), s.zeta2);
    };
    for (auto _ : state) {
        benchmark::DoNotOptimize(ad::backprop(fn, ps));
    }
}
BENCHMARK(BM_UnrollBackprop)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
