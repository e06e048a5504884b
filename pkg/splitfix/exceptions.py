"""
    Custom exceptions for use within the splitfix app.
"""


class SwcFormatError(ValueError):
    """ Provided SWC text could not be parsed into a valid skeleton. """

    DEFAULT_MESSAGE = "The provided SWC text is not a valid skeleton."

    def __init__(self, message: str = None, line_number: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.line_number = line_number

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the SwcFormatError. """

        return f"{self.message} (line_number={repr(self.line_number)})"


class PairFileFormatError(ValueError):
    """ Provided pair list file has a malformed record. """

    DEFAULT_MESSAGE = "The provided pair list file is not valid."

    def __init__(self, message: str = None, line_number: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.line_number = line_number

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the PairFileFormatError. """

        return f"{self.message} (line_number={repr(self.line_number)})"


class EmptyPointSetError(ValueError):
    """ A point set passed to a geometric operation was empty. """

    DEFAULT_MESSAGE = "Point set must contain at least one point."

    def __init__(self, message: str = None, argument_name: str = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.argument_name = argument_name

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the EmptyPointSetError. """

        return f"{self.message} (argument_name={repr(self.argument_name)})"


class DisconnectedSubsetError(ValueError):
    """ A node subset that must induce a connected subtree does not. """

    DEFAULT_MESSAGE = "The given node subset does not induce a connected subtree."

    def __init__(self, message: str = None, component_count: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.component_count = component_count

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """
            Returns formatted message & properties of the
            DisconnectedSubsetError.
        """

        return f"{self.message} (component_count={repr(self.component_count)})"


class InfeasibleConfigError(ValueError):
    """ A synthetic volume configuration cannot produce any neuron. """

    DEFAULT_MESSAGE = "The synthetic volume configuration is infeasible."

    def __init__(self, message: str = None, field_name: str = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.field_name = field_name

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the InfeasibleConfigError. """

        return f"{self.message} (field_name={repr(self.field_name)})"


class ArtifactRangeError(ValueError):
    """ An imaging artifact lies outside the volume it should degrade. """

    DEFAULT_MESSAGE = "The imaging artifact does not fit inside the volume."

    def __init__(self, message: str = None, artifact=None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.artifact = artifact

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the ArtifactRangeError. """

        return f"{self.message} (artifact={repr(self.artifact)})"


class VolumeFormatError(ValueError):
    """ A volume file does not follow the volume file format. """

    DEFAULT_MESSAGE = "The volume file is not in the expected format."

    def __init__(self, message: str = None, path=None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.path = path

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the VolumeFormatError. """

        return f"{self.message} (path={repr(self.path)})"


class ShapeMismatchError(ValueError):
    """ An array does not match the shape a layer or sample contract needs. """

    DEFAULT_MESSAGE = "The given array does not have the expected shape."

    def __init__(self, message: str = None, expected=None, actual=None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.expected = expected
        self.actual = actual

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the ShapeMismatchError. """

        return f"{self.message} (expected={repr(self.expected)}, actual={repr(self.actual)})"


class NonFiniteError(ArithmeticError):
    """ A gradient or loss value became NaN or infinite. """

    DEFAULT_MESSAGE = "A non-finite value was produced during training."

    def __init__(self, message: str = None, parameter_name: str = None, step: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.parameter_name = parameter_name
        self.step = step

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the NonFiniteError. """

        return f"{self.message} (parameter_name={repr(self.parameter_name)}, step={repr(self.step)})"


class EmptyPairCropError(LookupError):
    """ One segment of a candidate pair has no voxels inside its crop. """

    DEFAULT_MESSAGE = "empty-pair-crop"

    def __init__(self, message: str = None, seg_a: int = None, seg_b: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.seg_a = seg_a
        self.seg_b = seg_b

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the EmptyPairCropError. """

        return f"{self.message} (seg_a={repr(self.seg_a)}, seg_b={repr(self.seg_b)})"


class EmptyMaskError(ValueError):
    """ A segment mask selects no voxel of the embedding field. """

    DEFAULT_MESSAGE = "Segment mask must select at least one voxel."

    def __init__(self, message: str = None, segment_id: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.segment_id = segment_id

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the EmptyMaskError. """

        return f"{self.message} (segment_id={repr(self.segment_id)})"


class UnmappedNodeError(KeyError):
    """ A skeleton node has no entry in the node to segment map. """

    DEFAULT_MESSAGE = "Skeleton node is missing from the node to segment map."

    def __init__(self, message: str = None, node_id: int = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.node_id = node_id

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the UnmappedNodeError. """

        return f"{self.message} (node_id={repr(self.node_id)})"


class RunConfigError(ValueError):
    """ A run configuration file or override could not be resolved. """

    DEFAULT_MESSAGE = "The run configuration is invalid."

    def __init__(self, message: str = None, key: str = None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.key = key

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the RunConfigError. """

        return f"{self.message} (key={repr(self.key)})"


class CheckpointFormatError(ValueError):
    """ A checkpoint file is malformed or does not fit the model loading it. """

    DEFAULT_MESSAGE = "The checkpoint file does not match the expected format."

    def __init__(self, message: str = None, path=None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.path = path

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the CheckpointFormatError. """

        return f"{self.message} (path={repr(self.path)})"


class SampleCacheFormatError(ValueError):
    """ A classifier sample cache file is malformed. """

    DEFAULT_MESSAGE = "The sample cache file does not match the expected format."

    def __init__(self, message: str = None, path=None) -> None:
        self.message: str = message or self.DEFAULT_MESSAGE
        self.path = path

        super().__init__(message or self.DEFAULT_MESSAGE)

    def __str__(self) -> str:
        """ Returns formatted message & properties of the SampleCacheFormatError. """

        return f"{self.message} (path={repr(self.path)})"
