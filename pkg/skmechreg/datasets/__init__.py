from .datasets import totalsegmentator_anatomy, synthetic_anatomy
from . import synthetic
