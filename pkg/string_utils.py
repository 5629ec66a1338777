import re
import unicodedata
from difflib import SequenceMatcher
from fuzzywuzzy import fuzz
import logging

logger = logging.getLogger(__name__)

def normalize_name(text):
    """
    Normalize a solver / strategy name typed on the command line.

    "Hybrid_FLSQR G1" -> "hybrid-flsqr-g1"
    """
    text = unicodedata.normalize('NFKD', text).encode('ASCII', 'ignore').decode('utf-8')
    text = text.strip().lower()
    text = re.sub(r'[\s_]+', '-', text)
    text = re.sub(r'-{2,}', '-', text)
    return text.strip('-')

def are_strings_similar(str1, str2, threshold=0.85):
    """
    Decide whether two names are similar by averaging several fuzzy ratios.

    Returns (is_similar, score).
    """
    clean_str1 = normalize_name(str1)
    clean_str2 = normalize_name(str2)
    if clean_str1 == clean_str2:
        return True, 1.0

    sequence_ratio = SequenceMatcher(None, clean_str1, clean_str2).ratio()
    token_ratio = fuzz.token_sort_ratio(clean_str1, clean_str2) / 100
    partial_ratio = fuzz.partial_ratio(clean_str1, clean_str2) / 100

    score = (sequence_ratio + token_ratio + partial_ratio) / 3
    return score >= threshold, score

def closest_match(name, candidates, threshold=0.6):
    """Best-scoring candidate for `name`, or None when nothing reaches `threshold`."""
    best, best_score = None, threshold
    for candidate in candidates:
        _, score = are_strings_similar(name, candidate)
        if score >= best_score:
            best, best_score = candidate, score
    logger.debug(f"closest_match({name!r}) -> {best!r} (score {best_score:.3f})")
    return best
