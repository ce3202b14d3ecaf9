from .parsers import ParseError, parse_bibtex, parse_csv, parse_ris
from .profiles import RecordRejected, SourceProfile, default_profile, normalize, normalize_all
from .dedupe import DedupCluster, DedupLog, deduplicate, title_similarity

__all__ = [
    "ParseError",
    "parse_ris",
    "parse_bibtex",
    "parse_csv",
    "SourceProfile",
    "default_profile",
    "normalize",
    "normalize_all",
    "RecordRejected",
    "deduplicate",
    "DedupLog",
    "DedupCluster",
    "title_similarity",
]
