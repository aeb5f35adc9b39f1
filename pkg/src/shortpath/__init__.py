"""Self-training pipeline built around decision pivots.

Sample several reasoning paths per question, keep the ones that reach the
gold label, mine the pivots a majority of them share, consolidate a verified
short-path reasoning, and turn the pool into chosen/rejected preference
pairs, either applied directly to a simulated walk policy or exported for an
external DPO trainer.
"""

from .backends import (
    Backend,
    BackendCaps,
    ChannelledOutput,
    DecodeParams,
    OpenAICompatBackend,
    Provenance,
    ReasoningTrace,
    TokenBucket,
)
from .bootstrap import BootstrapConfig, CandidatePool, collect_pool, pool_to_Rplus
from .corpus import (
    Dataset,
    Example,
    Label,
    LabelSpace,
    load_dataset,
    normalize_label,
    normalize_pivot,
    save_dataset,
)
from .metrics import (
    LengthReport,
    PivotScore,
    RetrievalReport,
    accuracy,
    mean_output_length,
    pivot_f1,
    pivot_retrieval_rate,
    select_pairs_by_score,
)
from .orchestrator import LiveLoopRunner, LoopConfig, RunReport, resume, run_loop
from .preference import (
    DpoConfig,
    PreferencePair,
    build_pairs,
    dpo_grad_toy,
    dpo_loss,
    export_preferences,
)
from .simulator import (
    PivotWorld,
    SimBackend,
    ToyPolicy,
    apply_dpo_update,
    decide,
    generate_worlds,
    minimal_pivot_walk,
    sample_trace,
    trace_logprob,
)
from .synthesis import (
    PivotSet,
    ShortPath,
    build_consolidation_prompt,
    mine_pivots,
    synthesize_spr,
)

__version__ = "0.1.0"
