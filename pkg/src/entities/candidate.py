from dataclasses import dataclass, replace

import numpy as np

from src.core.errors import NonFiniteError
from src.components.data import augment_batch, iter_minibatches, normalize
from src.components.network import iter_params, loss_and_grad
from src.components.optim import apply_momentum_policy, cosine_lr, sgd_step


def derive_seed(parent_seed, generation, index):
    """Child stream seed: a SeedSequence hash of (parent seed, generation, index)"""
    sequence = np.random.SeedSequence([int(parent_seed), int(generation), int(index)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class MutationResult:
    candidate: object
    steps: int
    mean_loss: float
    samples: int


@dataclass(frozen=True)
class Candidate:
    """One population member: model, optimizer state and a private RNG seed"""
    id: int
    model: object
    opt: object
    rng_seed: int

    def spawn(self, index, generation, policy, momentum):
        """Offspring ``index``: cloned weights, optimizer state per the momentum policy"""
        return Candidate(
            id=index,
            model=self.model.clone(),
            opt=apply_momentum_policy(policy, self.opt, momentum),
            rng_seed=derive_seed(self.rng_seed, generation, index),
        )

    def is_finite(self):
        return all(np.all(np.isfinite(array)) for _, _, array in iter_params(self.model.params))

    def mutate(self, indices, dataset, schedule, batch_size, augment_cfg, weight_decay=0.0):
        """
        Subset gradient descent: one pass of mini-batch momentum SGD over
        ``indices`` in order. Augmentation draws from the candidate's own
        RNG stream; the learning rate follows the lineage step counter.
        """
        rng = np.random.default_rng(self.rng_seed)
        model, opt = self.model, self.opt
        losses = []
        for batch_indices in iter_minibatches(indices, batch_size):
            images = augment_batch(dataset.images[batch_indices], augment_cfg, rng)
            batch = normalize(images, dataset.means)
            loss, grads = loss_and_grad(model, batch, dataset.labels[batch_indices])
            model, opt = sgd_step(model, opt, grads, cosine_lr(schedule, opt.step_counter), weight_decay)
            losses.append(loss)
        trained = replace(self, model=model, opt=opt)
        if not trained.is_finite():
            raise NonFiniteError(f"candidate {self.id} has non-finite parameters after mutation",
                                 where=self.id)
        mean_loss = float(np.mean(losses)) if losses else 0.0
        return MutationResult(trained, len(losses), mean_loss, len(indices))
