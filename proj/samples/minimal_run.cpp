// Runs one protocol execution on a small network and prints the deviation
// of the legitimate agents from the nominal consensus value.
#include <iostream>

#include "trustcons/trustcons.hpp"

int main() {
    using namespace trustcons;

    RggOptions opts;
    opts.legit_count = 16;
    const NetworkTopology topo = generate_rgg(20, 0.35, 7, opts);
    const NominalModel nominal = make_nominal(topo);

    RunSpec spec;
    spec.trust = TrustModel(0.7, 0.3);
    spec.schedule = LambdaSchedule(0.9, 0.05);
    spec.horizon = 200;
    spec.seed = 42;
    const RunTrace trace = run_protocol(topo, nominal, spec);

    const DeviationMetrics m = deviation_metrics(trace, trace.x_nominal);
    const auto tf = empirical_recovery_time(trace);

    std::cout << "nominal consensus " << trace.x_nominal << '\n'
              << "final max deviation " << m.final_max_total << " (legit " << m.final_max_legit
              << ", malicious " << m.final_max_malicious << ")\n"
              << "recovery time " << (tf ? std::to_string(*tf) : std::string("unresolved")) << '\n';
}
