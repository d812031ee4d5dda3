#include "test.h"
void Test::methodC() {
   methodE();
   sema.leave();
}
void Test::methodD() {
   methodE();
}
void Test::methodE() {
   methodF();
   sema.enter();
   methodG();
}
void Test::methodF() { }
void Test::methodG() { }
