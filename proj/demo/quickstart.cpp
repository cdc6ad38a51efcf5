// One acquisition at 10 dB: serial search on both links, then ELG fine
// timing on the uplink (measured at the DRT) and the downlink.

#include <cstdio>

#include "fhsync/harness.hpp"

using namespace fhsync;

int main() {
  LinkSimulator sim;
  LinkEpisode ep;
  ep.seed = 42;
  ep.snr_db = 10.0;
  const auto cs = sim.reset(ep);
  if (!cs.uplink.detected || !cs.downlink.detected) {
    std::puts("coarse search did not detect");
    return 1;
  }
  auto show = [&](const char* stage) {
    const auto o = sim.offsets();
    std::printf("%-8s eps %+8.1f us  delta %+8.1f us\n", stage, o.epsilon_s * 1e6, o.delta_s * 1e6);
  };
  std::printf("coarse: %lld hops\n", static_cast<long long>(cs.hops()));
  show("coarse");
  FineConfig fine;
  const auto up = elg_fine_acquire(sim, fine, 30, Link::Uplink);
  show("uplink");
  const auto dn = elg_fine_acquire(sim, fine, 30, Link::Downlink);
  show("downlink");
  std::printf("fine: uplink %d steps (%s), downlink %d steps (%s), %.0f hops\n", up.steps_used,
              up.converged ? "converged" : "not converged", dn.steps_used, dn.converged ? "converged" : "not converged",
              up.hops + dn.hops);
  return 0;
}
