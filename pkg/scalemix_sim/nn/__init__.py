from scalemix_sim.nn.network import NetworkConfig, NetworkModel
from scalemix_sim.nn.estimator import (BootstrapResult, ParamBox, TrainingSet, bootstrap, estimate,
                                       generate_training_set, train)
