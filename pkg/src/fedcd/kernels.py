"""Kernel backend selection.

The compiled extension is used when it imports; set ``FEDCD_KERNELS=python``
to force the numpy fallback (``FEDCD_KERNELS=c`` makes a missing extension an
error instead of a silent fallback).

Full-batch passes (``logits``, ``predict``, ``loss_and_grad``) always run on
numpy: one BLAS matmul per layer beats the compiled per-example loop there.
The compiled module wins on the small mini-batches of ``sgd_epochs``, which is
where a simulation spends its time.
"""

import os

from . import _pykernels

_choice = os.environ.get("FEDCD_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "c":
            raise
        _impl = _pykernels

BACKEND = "c" if _impl is not _pykernels else "python"

logits = _pykernels.logits
predict = _pykernels.predict
loss_and_grad = _pykernels.loss_and_grad
sgd_epochs = _impl.sgd_epochs

RELU = _pykernels.RELU
TANH = _pykernels.TANH
