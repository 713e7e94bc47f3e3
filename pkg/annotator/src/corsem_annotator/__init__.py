"""VQA annotation service and batch tool.

Serves yes/no visual-question answers over the pipeline wire protocol
(POST /v1/vqa with a base64 image and a prompt) and batch-annotates image
directories into fixture TSVs plus binary annotation containers that the
analysis pipeline ingests directly.
"""

from .batch import AnnotationJob, batch_annotate
from .containers import write_matrix
from .models import ImageDecodeError, StubVqaModel, load_model
from .service import VqaService

__version__ = "0.1.0"
