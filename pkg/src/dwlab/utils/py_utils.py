import os


def logical_cpu_core_count():
    """Returns the number of logical CPU cores available to the process."""
    num_cpus = os.getenv("SLURM_CPUS_ON_NODE", None)
    if num_cpus is not None:
        return int(num_cpus)

    try:
        return os.cpu_count() or 1
    except NotImplementedError:
        return 1


def resolve_jobs(jobs: int) -> int:
    """`jobs <= 0` means one worker per logical core."""
    if jobs <= 0:
        return logical_cpu_core_count()
    return jobs


def chunk_ranges(total: int, chunk_size: int):
    """[start, stop) ranges covering range(total) in order."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    for start in range(0, total, chunk_size):
        yield start, min(start + chunk_size, total)
