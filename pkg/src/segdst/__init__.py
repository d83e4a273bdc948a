"""Zero-shot joint dialogue segmentation and state tracking with structured prompts."""

from .core import (BoundarySet, Conversation, DialogueStateRecord, LabelSchema, SegmentState, SlotSpec, Turn,
                   TurnSlotState, load_schema, normalize_events, validate_record)
from .metrics import (default_window_size, fleiss_kappa, joint_goal_accuracy, per_label_accuracy, pk,
                      window_diff)
from .parse import (ParseReport, TurnAnnotation, parse_icdst_output, parse_mwoz_output, parse_s3dst_output,
                    parse_slot_value_list)
from .prompt import PromptVariant, RenderedPrompt, build_prompt, render_conversation_xml, render_schema_xml
from .track import normalize_value, reconstruct_segments, resolve_cumulative_state

__version__ = "0.1.0"
