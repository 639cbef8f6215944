"""Exception hierarchy shared by every meshtrace module."""


class MeshTraceError(Exception):
    """Base class for all library errors."""


class ObjParseError(MeshTraceError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MeshStructureError(MeshTraceError):
    """Mesh connectivity violates an invariant (bad index, repeated vertex in a face, ...)."""


class SamplingError(MeshTraceError):
    pass


class DegenerateError(MeshTraceError):
    """Geometry has no usable extent (zero-size bounding box, empty component)."""


class ConfigurationError(MeshTraceError):
    pass


class ManifestError(MeshTraceError):
    def __init__(self, message, field=None, lineno=None):
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field = field
        self.lineno = lineno


class GenerationError(MeshTraceError):
    pass


class TrainingError(MeshTraceError):
    pass
