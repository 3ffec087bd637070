#pragma once

#define CVTNET_VERSION_STRING "0.1.0"
