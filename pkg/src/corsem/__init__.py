"""corsem: semantic-annotation encoding models for volumetric brain data.

Maps stimuli annotations (binary visual-question answers or continuous
image-text similarities) onto per-voxel response statistics, corrects
them with Monte Carlo cluster-extent thresholds, and organizes the label
maps into overlays, hierarchy intersections, and a clustered semantic
network.
"""

from ._kernels import BACKEND as kernel_backend
from ._kernels import compiled_available
from .core import (AnnotationMatrix, ContainerError, CorsemError, LabelSet,
                   MaskIndexMap, StatMap, VolumeGeometry, read_matrix,
                   write_matrix)
from .design import BalancedDesign, align_rows, balance_indices
from .glm import OlsResult, fit_label_map, fit_multivariate, group_ttest, simple_ols
from .correct import (Cluster, ClusterSet, ClusterThreshold, apply_correction,
                      connected_components, fwhm_to_sigma, gaussian_smooth,
                      mc_cluster_threshold)
from .encode import (DEFAULT_TEMPLATE, AnswerCache, EmbeddingSet,
                     FixtureVqaBackend, HttpVqaBackend, PromptTemplate,
                     cosine_similarity, feature_similarity_annotate,
                     render_prompt, vqa_annotate)
from .semantics import (OVERLAY_CATEGORIES, OverlayCategoryMap, OverlayCounts,
                        SemanticNetwork, build_network, cluster_mean_maps,
                        hierarchy_overlay, overlay_counts, similarity_matrix,
                        to_distance, ward_cluster, ward_merge_sequence)
from .special import (normal_two_tailed_critical, regularized_incomplete_beta,
                      student_t_two_tailed_p, t_critical)
from .synth import (PhantomLabel, PhantomSpec, PhantomTruth,
                    generate_hierarchy_phantom, generate_phantom)
from .pipeline import PipelineConfig, compare_methods, run_pipeline

__version__ = "0.1.0"
