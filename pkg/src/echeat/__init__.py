"""Flag cheating in online multiple-choice exams.

Two detectors work together: an IP registry that spreads repeat addresses
over different question sets, and a neural classifier over a 23-bit
correctness-plus-speed vector.
"""

from .encoding import BehaviorLabel, FeatureEncoder, SpeedCategory, SpeedModel, encode, label
from .estimator import BehaviorClassifier
from .ipagent import DecisionKind, IpRegistry, SessionDecision
from .models import Network, build, build_baseline, build_denselstm, classify
from .records import Answer, ExamRecord, ExamSpec, make_record, parse_csv, write_csv

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "BehaviorClassifier",
    "BehaviorLabel",
    "DecisionKind",
    "ExamRecord",
    "ExamSpec",
    "FeatureEncoder",
    "IpRegistry",
    "Network",
    "SessionDecision",
    "SpeedCategory",
    "SpeedModel",
    "build",
    "build_baseline",
    "build_denselstm",
    "classify",
    "encode",
    "label",
    "make_record",
    "parse_csv",
    "write_csv",
]
