"""Knowledge base completion: weighted graph-convolutional encoder feeding a
translational convolutional decoder, trained 1-N and evaluated with filtered
ranking."""

from .adjacency import (ComposedAdjacency, RelationAdjacency, build_adjacency,
                        compose, spmm, spmm_backward)
from .autodiff import (Adam, BatchNorm, NumericError, Parameter, Tape,
                       adam_step, grad_check)
from .baselines import DistMultDecoder, TransEDecoder, distmult_score, transe_score
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, DataFormatError, FilterIndex, TripleStore, Vocabulary,
                   add_reciprocal, build_filter_index, build_store, build_vocab,
                   load_dataset, merge_attributes, parse_triples, prepare_dataset,
                   save_dataset)
from .decoder import ConvDecoder, DecoderBank, conv_forward, pad, prob, score_all
from .encoder import GraphConvLayer, GraphEncoder, layer_forward, nodewise_forward
from .evaluation import (MetricReport, evaluate, filtered_rank, indegree_report,
                         report_csv, report_text)
from .model import Model, build_model, model_from_checkpoint
from .training import QueryBatch, TrainConfig, fit, make_batches, train_step
from .verify import end_to_end_gradcheck, toy_dataset

__version__ = "0.1.0"
