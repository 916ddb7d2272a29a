"""Spatial, sample and demographic bias audits for crowdsourced disaster reports."""

from .errors import CrowdBiasError, DataError, DegenerateError, NumericError, RankDeficientError, ValidationError
from .esda import bilisa, classify_cluster, global_moran, lisa
from .geo_ingest import AttributeTable, Hierarchy, Region, RegionSet, build_hierarchy, parse_attributes, parse_geometry
from .infer import anova_over_clusters, f_cdf, model_matrix, ols, one_way_anova, stars, t_cdf
from .transform import apply_category_filter, descriptive_stats, disaggregate_by_area, minmax_normalize, rate_normalize
from .weights import WeightMatrix, build_contiguity, from_edge_list, row_standardize

__version__ = "0.1.0"
