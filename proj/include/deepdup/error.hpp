#pragma once

#include <stdexcept>
#include <string>

namespace deepdup {

/// Base class for every error raised by the library. The concrete subclass
/// names the contract that was violated; what() carries the details.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define DEEPDUP_DEFINE_ERROR(Name)                                          \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
    }

DEEPDUP_DEFINE_ERROR(ShapeMismatch);
DEEPDUP_DEFINE_ERROR(NonFiniteInput);
DEEPDUP_DEFINE_ERROR(LabelOutOfRange);
DEEPDUP_DEFINE_ERROR(EmptyDataset);
DEEPDUP_DEFINE_ERROR(IndexOutOfRange);
DEEPDUP_DEFINE_ERROR(LengthMismatch);
DEEPDUP_DEFINE_ERROR(GapViolation);
DEEPDUP_DEFINE_ERROR(TriggerOnLastPackage);
DEEPDUP_DEFINE_ERROR(PopulationTooSmall);
DEEPDUP_DEFINE_ERROR(NoTargetSamples);
DEEPDUP_DEFINE_ERROR(UnsupportedLayerKind);
DEEPDUP_DEFINE_ERROR(AllPackagesProtected);
DEEPDUP_DEFINE_ERROR(InvalidModel);
DEEPDUP_DEFINE_ERROR(DatasetUnreadable);
DEEPDUP_DEFINE_ERROR(FormatError);

#undef DEEPDUP_DEFINE_ERROR

/// Configuration error carrying the dotted path of the offending field.
class ConfigInvalid : public Error {
public:
    ConfigInvalid(std::string field, const std::string& what)
        : Error("ConfigInvalid: " + field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace deepdup
