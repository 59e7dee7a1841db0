"""apex: an access-pattern tensor IR with an equality-saturation compiler
that rediscovers accelerator mappings (im2col, matmul blocking, systolic
offload) from small generic rewrite rules."""

__version__ = "0.1.0"

from .ir import (  # noqa: F401
    AccessPatternShape,
    AccelCall,
    Access,
    CartProd,
    Compute,
    Concat,
    Expr,
    Flatten,
    NamedOp,
    Pair,
    Reshape,
    Slice,
    Squeeze,
    Transpose,
    Var,
    Windows,
    check_well_formed,
    infer_shape,
    windows_output_dims,
)
from .interp import (  # noqa: F401
    Tensor,
    eval_expr,
    frobenius_relative_error,
    oracle_conv2d,
    oracle_matmul,
    oracle_maxpool,
)
from .egraph import CostModel, SaturationConfig, extract, saturate  # noqa: F401
from .rules import RewriteRule, build_rule_library, check_rule_soundness  # noqa: F401
from .textio import parse, program_text, to_text  # noqa: F401
