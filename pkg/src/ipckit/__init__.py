"""ipckit: insider-proof encrypted channels and covert-abort QKD post-processing.

The core primitive is a one-time channel that hides a message from an
eavesdropper who helped build the message source: the ciphertext is the
message XORed with a truncated GF(2^n) product of a pooled key and a fresh
public seed.  On top of that sit a key-pool store, a security-budget
planner, a device-independent QKD post-processing simulator whose public
transcripts never reveal whether a round aborted, a distinguisher test
bench with exact total-variation enumeration, and a framed wire protocol
plus CLI for running two-party sessions.
"""

from .errors import (
    IpckitError,
    ParameterError,
    UnsupportedDegreeError,
    PoolExhaustedError,
    PoolFormatError,
    BudgetExceededError,
    FrameError,
    ProtocolError,
)
from .gf2n import (
    FieldSpec,
    standard_field,
    gf_mul,
    gf_add,
    truncate,
    is_irreducible,
    SUPPORTED_DEGREES,
)

__version__ = "0.1.0"
