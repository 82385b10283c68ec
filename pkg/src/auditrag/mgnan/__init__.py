from .model import (
    Attribution,
    FeatureGrouping,
    Link,
    MGnanModel,
    MonotoneDecay,
    Structure,
    canonical_sum,
    encode,
    encode_features,
    load_model,
    model_from_dict,
    model_to_dict,
    node_weight,
    save_model,
)
from .tasks import PlantedTask, make_linear_task, make_planted_task, planted_target, random_connected_graph
from .training import Adam, Sample, Task, TrainConfig, batch_loss, loss_and_gradients, train

__all__ = [
    "Adam",
    "Attribution",
    "FeatureGrouping",
    "Link",
    "MGnanModel",
    "MonotoneDecay",
    "PlantedTask",
    "Sample",
    "Structure",
    "Task",
    "TrainConfig",
    "batch_loss",
    "canonical_sum",
    "encode",
    "encode_features",
    "load_model",
    "loss_and_gradients",
    "make_linear_task",
    "make_planted_task",
    "model_from_dict",
    "model_to_dict",
    "node_weight",
    "planted_target",
    "random_connected_graph",
    "save_model",
    "train",
]
