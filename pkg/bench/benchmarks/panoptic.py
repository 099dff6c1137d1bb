import numpy as np

from sksits.panoptic import Proposal, ProposalSet, panoptic_from_proposals


def random_proposals(n_proposals, size=128, seed=0):
    rng = np.random.RandomState(seed)
    proposals = list()
    for _ in range(n_proposals):
        h, w = rng.randint(4, 24, size=2)
        top, left = rng.randint(0, size - h), rng.randint(0, size - w)
        proposals.append(
            Proposal(
                center=(top + h // 2, left + w // 2),
                quality=float(rng.uniform()),
                size=(float(h), float(w)),
                class_probs=rng.dirichlet(np.ones(20)),
                shape_patch=np.zeros((16, 16)),
                mask=rng.uniform(size=(h, w)),
                window=(top, left, top + h, left + w),
            )
        )
    proposals.sort(key=lambda p: -p.quality)
    return ProposalSet(proposals, (size, size))


class PanopticMerge:
    params = [10, 100, 500]
    param_names = ["n_proposals"]

    def setup(self, n_proposals):
        self.proposals = random_proposals(n_proposals)

    def time_panoptic_from_proposals(self, n_proposals):
        panoptic_from_proposals(self.proposals)

    def track_n_instances(self, n_proposals):
        return len(panoptic_from_proposals(self.proposals).instances)
