#!/usr/bin/env python3
"""Single queue with service rate (1 + 1/x)^alpha.

The service rate decays to 1 as the queue grows, so the stability boundary
sits at arrival rate 1 no matter what alpha is -- but the point exactly on
the boundary genuinely depends on alpha (positive recurrent for alpha > 1,
null recurrent otherwise), which no general classifier can decide.  The
engine therefore reports a margin-sized indeterminate band around 1.
"""

from coupledq import StabilityEngine, one_server_power_law

for alpha in (0.5, 2.0):
    engine = StabilityEngine(one_server_power_law(alpha))
    print(f"\nservice rate (1 + 1/x)^{alpha}")
    for lam in (0.8, 0.95, 0.999, 1.0, 1.001, 1.05, 1.3):
        verdict = engine.classify((lam,))
        cert = verdict.certificate
        stage = cert.stages[0] if cert and cert.stages else None
        extra = ""
        if stage is not None:
            extra = f"  (arrival {stage.lam} vs limiting service {stage.avg_rate:.9f})"
        print(f"  lambda = {lam:<6} -> {verdict.system.value}{extra}")

print("""
Note the verdicts flip exactly around 1.0 and the +-1e-4 margin band is
reported as boundary-indeterminate rather than guessed.""")
