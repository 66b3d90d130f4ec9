"""Named sub-seeds derived from one global seed by stable hashing."""
import hashlib

SEED_NAMES = ("balance", "augment", "split", "init", "shuffle", "dropout", "folds", "synth")


def derive_seed(base: int, name: str) -> int:
    digest = hashlib.sha256(f"{int(base)}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def seed_block(global_seed: int, overrides=None) -> dict:
    """Every named seed, taking explicit overrides where given."""
    overrides = overrides or {}
    return {n: int(overrides[n]) if overrides.get(n) is not None else derive_seed(global_seed, n)
            for n in SEED_NAMES}
