import os

# single-threaded BLAS before numpy loads: small-matrix ops dominate and
# thread dispatch only adds noise (bevrope/__init__ does the same)
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
