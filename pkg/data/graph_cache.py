"""
Graph Cache — featurize each drug once per process.

Dual graphs are immutable after construction, so one instance per drug is
shared by training, evaluation and prediction. ``build_all`` can fan the
work out to joblib workers; results come back in input order.
"""

import logging

from joblib import Parallel, delayed

from chem.molgraph import featurize_smiles
from config import settings
from utils.errors import DataError

logger = logging.getLogger(__name__)


class GraphCache:
    """drug_id -> DualGraph, built lazily from a drug_id -> SMILES table."""

    def __init__(self, drugs, n_jobs=settings.FEATURIZE_JOBS):
        self.drugs = dict(drugs)
        self.n_jobs = n_jobs
        self._cache = {}
        self.hits = 0
        self.misses = 0

    def get(self, drug_id):
        graph = self._cache.get(drug_id)
        if graph is not None:
            self.hits += 1
            return graph
        if drug_id not in self.drugs:
            raise DataError(f"Unknown drug id '{drug_id}'")
        self.misses += 1
        graph = featurize_smiles(self.drugs[drug_id], drug_id)
        self._cache[drug_id] = graph
        return graph

    def put(self, drug_id, smiles):
        """Registers (or replaces) an ad-hoc drug, e.g. a SMILES given on the command line."""
        self.drugs[drug_id] = smiles
        self._cache.pop(drug_id, None)
        return self.get(drug_id)

    def build_all(self, drug_ids=None):
        """Featurizes every missing drug; returns graphs in the order of ``drug_ids``."""
        drug_ids = list(self.drugs) if drug_ids is None else list(drug_ids)
        todo = [d for d in dict.fromkeys(drug_ids) if d not in self._cache]
        unknown = [d for d in todo if d not in self.drugs]
        if unknown:
            raise DataError(f"Unknown drug id(s): {', '.join(unknown)}")
        if todo:
            if self.n_jobs == 1 or len(todo) == 1:
                graphs = [featurize_smiles(self.drugs[d], d) for d in todo]
            else:
                graphs = Parallel(n_jobs=self.n_jobs)(
                    delayed(featurize_smiles)(self.drugs[d], d) for d in todo
                )
            self._cache.update(zip(todo, graphs))
            self.misses += len(todo)
            logger.info("Featurized %d drug(s) with n_jobs=%d", len(todo), self.n_jobs)
        return [self._cache[d] for d in drug_ids]

    def invalidate(self, drug_id=None):
        if drug_id is None:
            self._cache.clear()
        else:
            self._cache.pop(drug_id, None)

    def stats(self):
        return {"cached": len(self._cache), "hits": self.hits, "misses": self.misses}
