from .data import BINARY_TASK, MULTICLASS_DOMAIN, Dataset, TaskDatabase, split
from .domains import family_counts, gen_base_images, gen_domain_db
from .io import dumps_db, load_db, loads_db, save_db
from .synthetic import cluster_assignment, gen_pretrain_corpus, gen_synthetic_tasks, planted_boundaries
from .transforms import FAMILIES, TransformSpec, apply_transform, default_specs
from .cifar import load_cifar10
