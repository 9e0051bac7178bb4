"""Online policy learning while dynamics keep changing.

Every 25 steps each method refits on the data it considers relevant and acts
epsilon-greedily for the next batch.  The proposed method keeps only each
cluster's recent stationary stretch; "dh" pools everything, "homogeneous"
pools subjects but trims time, "stationary" trims time per subject, and
"oracle" is told the true segmentation.  A reduced configuration keeps the
run to about a minute; the acceptance suite runs the full protocol.
"""

from chunkrl.harness import OnlineProtocol, run_online_experiment
from chunkrl.policy import RegressorSpec

proto = OnlineProtocol(end=150, restarts=3, regressor=RegressorSpec("tree", 5, 50))
report = run_online_experiment(proto, seeds=range(3))
print("scenarios drawn per replication:", report.scenarios)
print("average reward after the offline period, median over replications:")
for name, value in sorted(report.medians().items(), key=lambda kv: -kv[1]):
    print(f"  {name:12s} {value:.4f}")
