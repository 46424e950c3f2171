# %% [markdown]
# # A replicated experiment
#
# ``run_experiment`` runs simulate, split, train, predict and evaluate for
# every variant over seeded replicates and writes per-replicate files plus a
# summary. The same thing is available as ``harness replicate --config``.

# %%
import json
import tempfile

from harness.experiment import ExperimentConfig, run_experiment

config = ExperimentConfig.from_dict({
    "seed": 11,
    "sim": {"setting": 4, "n": 1000, "p": 25},
    "optimizer": {"iterations": 30, "batch_size": 128, "holdout_size": 128},
    "metrics": {"min_group_size": 20},
    "variants": ["harness", "no_group", "baseline"],
})
out = tempfile.mkdtemp()
report = run_experiment(config, replicates=2, out_dir=out)
print(out)
for variant, splits in report["summary"].items():
    print(variant, json.dumps(splits["prospective"]["overall"]["auroc"]))
print("failures:", report["failures"])
