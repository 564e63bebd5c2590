"""pvglab: a laboratory for prover-verifier games.

A trusted but capacity-limited verifier learns to predict labels from an
untrusted prover's messages while the prover argues for a fixed answer.
The package trains such agent pairs with alternating gradient updates,
simulates the closed-form erasure-channel game, classifies equilibria of
finite prover-verifier games across move orderings, and stress-tests
frozen verifiers against adversarially optimized provers and messages.
"""

__version__ = "0.1.0"
