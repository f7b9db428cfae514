from .network import (BATCHNORM, CONV, CONV_BN_RELU, CONV_RELU, FC, FLATTEN, MAXPOOL, RELU,
                      LayerSpec, NetworkSpec, batchnorm, conv, fc, flatten, init_params, maxpool,
                      relu, toy_network)
from .trainer import (EpochMetrics, ForwardContext, Gradients, Pruner, UsageError, backward,
                      evaluate, forward, loss_and_grad, sgd_step, train)
