from .folds import FoldSpec, make_folds
from .lstm import (Hyperparams, LstmDivergence, LstmParams, clip_by_global_norm, init_params,
                   loss_and_grad, lstm_predict, train_lstm)
from .tpe import DEFAULT_SPACE, tpe_search
from .walkforward import (RUN_REPORT_COLUMNS, ForecastDataset, Standardizer, TrainReport, WalkForwardConfig,
                          WalkForwardResult, walk_forward_ensemble, window_supervised)
