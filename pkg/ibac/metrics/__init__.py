from ibac.metrics.alignment import (AlignmentMetric, AlignmentReport, MutualInformationAlignment, PearsonAlignment,
                                    alignment_report)
from ibac.metrics.info import bin_indices, entropy, mutual_information, pearson
