"""Disclosure sweep and context ablations, printed as the report table."""

from privqa.harness import (
    ExperimentConfig,
    render_report_table,
    run_budget_sweep,
    run_experiment,
)
from privqa.synthetic import SyntheticContextProvider, SyntheticSpec, build_corpus

spec = SyntheticSpec(seed=0, train_size=200, dev_size=80, test_size=80)
corpus = build_corpus(spec)
provider = SyntheticContextProvider(spec)

cfg = ExperimentConfig(regime="FTC", view="Full", seed=0, featurizer_dim=2**14)

# disclosing fewer keywords lowers the budget proportionally and costs
# accuracy monotonically
reports = run_budget_sweep(cfg, corpus, provider, ratios=(0.25, 0.5, 0.75, 1.0))

# the ablation views tell apart where the signal lives: here it is carried
# entirely by the specific contexts
for view in ("OnlyOverall", "OnlySpecific", "NoRelation", "NoContext"):
    vcfg = ExperimentConfig(regime="FTC", view=view, ratio=1.0, seed=0, featurizer_dim=2**14)
    reports.append(run_experiment(vcfg, corpus, provider))

print(render_report_table(reports))
