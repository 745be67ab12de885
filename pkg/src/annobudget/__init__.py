"""Budget-aware active-annotation selection and closed-loop simulation.

Given an unlabeled image pool, a cost model for weak versus strong
annotation, and a pluggable detector, the engine sequentially decides which
images to annotate and how, mines pseudo labels for weakly annotated
images, and evaluates policies with budget-mAP curves and a range-averaged
budget metric.
"""

from .dataset import (BudgetLedger, CostModel, Dataset, GroundTruthBox,
                      ImageRecord, PoolState, SelectionPlan, apply_plan,
                      candidates, init_pools, load_dataset,
                      make_cost_model, make_synthetic_dataset, save_dataset)
from .detector import (DetectorParams, PredictionFileBackend, PredictionSet,
                       SyntheticBackend, SyntheticDetectorModel,
                       ingest_predictions, make_detector_params,
                       make_prediction_set, predict, train_synthetic)
from .evaluation import (BudgetCurve, budget_average_map, difficulty_breakdown,
                         mean_ap, run_curve, voc_ap)
from .pseudo import PseudoLabelSet, hybrid_round, iou, mine_pseudo_labels, \
    nms_per_class
from .scoring import UncertaintyScore, lal_features, model_state, uncertainty
from .selection import (FractionalSolution, ObjectiveCoefficients,
                        build_objective_lal, build_objective_us,
                        round_solution, select_optimization, select_random,
                        select_uncertainty, solve_relaxed_lp)

__version__ = "0.1.0"
